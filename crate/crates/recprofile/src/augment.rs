//! Embedding alignment and list augmentation: regress content vectors onto
//! the surrogate latent space, unify both item tables, and extend each top-K
//! list with the nearest unseen candidates by embedding distance.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::ingest::EmbeddingTable;
use crate::math::{axpy, dot, euclidean, Mat};
use crate::seed::SeedPolicy;
use crate::surrogate::RecListSet;

/// Alignment architecture: a plain linear map, or one hidden tanh layer of
/// the same width as the output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AlignKind {
    Linear,
    Hidden,
}

impl std::str::FromStr for AlignKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linear" => Ok(AlignKind::Linear),
            "hidden" => Ok(AlignKind::Hidden),
            other => Err(Error::invalid(format!("unknown alignment kind {other:?}"))),
        }
    }
}

/// Full-batch gradient-descent settings for the alignment regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignConfig {
    pub kind: AlignKind,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Fraction of items held out to report generalization residual.
    pub holdout_frac: f64,
    pub seed: u64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig {
            kind: AlignKind::Linear,
            learning_rate: 0.1,
            epochs: 500,
            holdout_frac: 0.1,
            seed: 0,
        }
    }
}

/// Maps content vectors (dim L2) into the surrogate space (dim L3).
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentModel {
    kind: AlignKind,
    /// Output map: L3 × L2 for linear, L3 × L3 after the hidden layer.
    w: Mat,
    b: Vec<f64>,
    /// Hidden variant only: first layer (L3 × L2) and its bias.
    w0: Option<(Mat, Vec<f64>)>,
}

impl AlignmentModel {
    /// Gaussian(0, 0.1) weights, zero biases.
    pub fn init(kind: AlignKind, in_dim: usize, out_dim: usize, seed: u64) -> Self {
        let policy = SeedPolicy::new(seed);
        let normal = Normal::new(0.0, 0.1).expect("valid std");
        let draw = |stage: &str, rows: usize, cols: usize| {
            let mut rng = policy.rng(stage);
            Mat::from_fn(rows, cols, |_, _| normal.sample(&mut rng))
        };
        match kind {
            AlignKind::Linear => AlignmentModel {
                kind,
                w: draw("align.init.w", out_dim, in_dim),
                b: vec![0.0; out_dim],
                w0: None,
            },
            AlignKind::Hidden => AlignmentModel {
                kind,
                w: draw("align.init.w", out_dim, out_dim),
                b: vec![0.0; out_dim],
                w0: Some((draw("align.init.w0", out_dim, in_dim), vec![0.0; out_dim])),
            },
        }
    }

    /// Builds a linear model directly from its weights.
    pub fn from_linear(w: Mat, b: Vec<f64>) -> Result<Self> {
        if w.rows() != b.len() {
            return Err(Error::invalid("weight rows must match bias length"));
        }
        Ok(AlignmentModel {
            kind: AlignKind::Linear,
            w,
            b,
            w0: None,
        })
    }

    pub fn kind(&self) -> AlignKind {
        self.kind
    }

    pub fn in_dim(&self) -> usize {
        match &self.w0 {
            None => self.w.cols(),
            Some((w0, _)) => w0.cols(),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.w.rows()
    }

    /// W·e + B (with the hidden tanh layer interposed for that variant).
    pub fn apply(&self, e: &[f64]) -> Result<Vec<f64>> {
        if e.len() != self.in_dim() {
            return Err(Error::invalid(format!(
                "alignment input has dim {}, model expects {}",
                e.len(),
                self.in_dim()
            )));
        }
        match &self.w0 {
            None => {
                let mut out = self.w.mul_vec(e);
                axpy(1.0, &self.b, &mut out);
                Ok(out)
            }
            Some((w0, b0)) => {
                let mut h = w0.mul_vec(e);
                for (hv, bv) in h.iter_mut().zip(b0) {
                    *hv = (*hv + bv).tanh();
                }
                let mut out = self.w.mul_vec(&h);
                axpy(1.0, &self.b, &mut out);
                Ok(out)
            }
        }
    }

    /// All trainable parameters flattened in a fixed order: output weights
    /// row-major, output bias, then (hidden variant) first-layer weights and
    /// bias.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend_from_slice(self.w.data());
        out.extend_from_slice(&self.b);
        if let Some((w0, b0)) = &self.w0 {
            out.extend_from_slice(w0.data());
            out.extend_from_slice(b0);
        }
        out
    }

    /// Inverse of [`params_flat`].
    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        let expected = self.params_flat().len();
        if flat.len() != expected {
            return Err(Error::invalid(format!(
                "parameter vector has {} entries, model needs {expected}",
                flat.len()
            )));
        }
        let mut at = 0;
        let mut take = |dst: &mut [f64]| {
            dst.copy_from_slice(&flat[at..at + dst.len()]);
            at += dst.len();
        };
        take(self.w.data_mut());
        take(&mut self.b);
        if let Some((w0, b0)) = &mut self.w0 {
            take(w0.data_mut());
            take(b0);
        }
        Ok(())
    }

    /// Mean of `‖model(e) − t‖²` over (content, target) pairs.
    pub fn mse_loss(&self, pairs: &[(&[f64], &[f64])]) -> Result<f64> {
        if pairs.is_empty() {
            return Err(Error::invalid("loss needs at least one pair"));
        }
        let mut total = 0.0;
        for &(e, t) in pairs {
            let mut r = self.apply(e)?;
            axpy(-1.0, t, &mut r);
            total += dot(&r, &r);
        }
        Ok(total / pairs.len() as f64)
    }

    /// [`mse_loss`] plus its exact gradient in [`params_flat`] order (batch
    /// means). This is the same arithmetic the training loop descends.
    pub fn mse_loss_and_grad(&self, pairs: &[(&[f64], &[f64])]) -> Result<(f64, Vec<f64>)> {
        if pairs.is_empty() {
            return Err(Error::invalid("gradient needs at least one pair"));
        }
        let l2 = self.in_dim();
        let mut loss = 0.0;
        let mut gw = Mat::zeros(self.w.rows(), self.w.cols());
        let mut gb = vec![0.0; self.b.len()];
        let mut gw0 = self
            .w0
            .as_ref()
            .map(|(w0, b0)| (Mat::zeros(w0.rows(), w0.cols()), vec![0.0; b0.len()]));
        for &(e, t) in pairs {
            if e.len() != l2 {
                return Err(Error::invalid(format!(
                    "content vector has dim {}, model expects {l2}",
                    e.len()
                )));
            }
            match &self.w0 {
                None => {
                    let mut r = self.w.mul_vec(e);
                    axpy(1.0, &self.b, &mut r);
                    axpy(-1.0, t, &mut r);
                    loss += dot(&r, &r);
                    for (out, &rv) in gw.data_mut().chunks_mut(l2).zip(&r) {
                        axpy(2.0 * rv, e, out);
                    }
                    axpy(2.0, &r, &mut gb);
                }
                Some((w0, b0)) => {
                    let mut h = w0.mul_vec(e);
                    for (hv, bv) in h.iter_mut().zip(b0) {
                        *hv = (*hv + bv).tanh();
                    }
                    let mut r = self.w.mul_vec(&h);
                    axpy(1.0, &self.b, &mut r);
                    axpy(-1.0, t, &mut r);
                    loss += dot(&r, &r);
                    for (out, &rv) in gw.data_mut().chunks_mut(h.len()).zip(&r) {
                        axpy(2.0 * rv, &h, out);
                    }
                    axpy(2.0, &r, &mut gb);
                    // back through tanh: dz = (Wᵀ 2r) ⊙ (1 − h²)
                    let mut dz = self.w.mul_vec_t(&r);
                    for (d, hv) in dz.iter_mut().zip(&h) {
                        *d *= 2.0 * (1.0 - hv * hv);
                    }
                    let (gw0m, gb0) = gw0.as_mut().expect("hidden grads");
                    for (out, &dv) in gw0m.data_mut().chunks_mut(l2).zip(&dz) {
                        axpy(dv, e, out);
                    }
                    axpy(1.0, &dz, gb0);
                }
            }
        }
        let inv = 1.0 / pairs.len() as f64;
        let mut grad = Vec::new();
        grad.extend(gw.data().iter().map(|g| g * inv));
        grad.extend(gb.iter().map(|g| g * inv));
        if let Some((gw0m, gb0)) = &gw0 {
            grad.extend(gw0m.data().iter().map(|g| g * inv));
            grad.extend(gb0.iter().map(|g| g * inv));
        }
        Ok((loss * inv, grad))
    }
}

/// Residuals observed while fitting the alignment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignStats {
    /// Mean Euclidean residual on the training items before any update.
    pub initial_train_res: f64,
    /// Mean Euclidean residual on the training items after fitting.
    pub train_res: f64,
    /// Mean Euclidean residual on the held-out items (equals `train_res`
    /// when the holdout is empty).
    pub holdout_res: f64,
}

fn mean_res(
    model: &AlignmentModel,
    content: &EmbeddingTable,
    target: &EmbeddingTable,
    ids: &[&str],
) -> Result<f64> {
    if ids.is_empty() {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    for id in ids {
        let pred = model.apply(content.get(id).expect("checked"))?;
        total += euclidean(&pred, target.get(id).expect("checked"));
    }
    Ok(total / ids.len() as f64)
}

/// Fits `W·e^C + B ≈ e^S` by full-batch gradient descent on mean squared
/// error over the shared item set, holding out a fraction of items to report
/// the generalization residual.
pub fn train_alignment(
    content: &EmbeddingTable,
    target: &EmbeddingTable,
    cfg: &AlignConfig,
) -> Result<(AlignmentModel, AlignStats)> {
    if content.is_empty() {
        return Err(Error::invalid("alignment needs at least one item"));
    }
    if content.len() != target.len() {
        return Err(Error::invalid(format!(
            "content covers {} items, target covers {}",
            content.len(),
            target.len()
        )));
    }
    for id in content.ids() {
        if target.get(id).is_none() {
            return Err(Error::missing("alignment target", id.clone()));
        }
    }
    let (l2, l3) = (content.dim(), target.dim());
    let policy = SeedPolicy::new(cfg.seed);
    let mut order: Vec<usize> = (0..content.len()).collect();
    order.shuffle(&mut policy.rng("align.split"));
    let n_holdout = ((cfg.holdout_frac * order.len() as f64) + 1e-9).floor() as usize;
    let ids: Vec<&str> = content.ids().iter().map(|s| s.as_str()).collect();
    let holdout: Vec<&str> = order[..n_holdout].iter().map(|&i| ids[i]).collect();
    let train: Vec<&str> = order[n_holdout..].iter().map(|&i| ids[i]).collect();
    if train.is_empty() {
        return Err(Error::invalid("holdout fraction leaves no training items"));
    }

    let mut model = AlignmentModel::init(cfg.kind, l2, l3, cfg.seed);
    let initial_train_res = mean_res(&model, content, target, &train)?;
    let pairs: Vec<(&[f64], &[f64])> = train
        .iter()
        .map(|id| {
            (
                content.get(id).expect("checked"),
                target.get(id).expect("checked"),
            )
        })
        .collect();
    for epoch in 0..cfg.epochs {
        let (_, grad) = model.mse_loss_and_grad(&pairs)?;
        let mut params = model.params_flat();
        axpy(-cfg.learning_rate, &grad, &mut params);
        model.set_params_flat(&params)?;
        if !model.w.is_finite() {
            return Err(Error::Train(format!(
                "alignment diverged at epoch {epoch}; lower the learning rate"
            )));
        }
    }
    let train_res = mean_res(&model, content, target, &train)?;
    let holdout_res = if holdout.is_empty() {
        train_res
    } else {
        mean_res(&model, content, target, &holdout)?
    };
    Ok((
        model,
        AlignStats {
            initial_train_res,
            train_res,
            holdout_res,
        },
    ))
}

/// Maps every vector of `content` through the alignment model.
pub fn apply_alignment(model: &AlignmentModel, content: &EmbeddingTable) -> Result<EmbeddingTable> {
    let entries = content
        .iter()
        .map(|(id, e)| Ok((id.to_string(), model.apply(e)?)))
        .collect::<Result<Vec<_>>>()?;
    EmbeddingTable::from_rows(model.out_dim(), entries)
}

/// Where a unified item vector came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    /// Trained surrogate embedding (provider-touched items).
    Surrogate,
    /// Content embedding mapped through the alignment model.
    Aligned,
}

/// One vector per dataset item, all in the surrogate latent space, indexed
/// by internal item index.
#[derive(Debug, Clone, PartialEq)]
pub struct UnifiedEmbedding {
    dim: usize,
    vecs: Vec<Vec<f64>>,
    prov: Vec<Provenance>,
}

impl UnifiedEmbedding {
    /// Builds the table directly from per-item vectors (position = item
    /// index), all carrying the same provenance tag. Handy when every vector
    /// comes from one source, e.g. a recommender's exported item embeddings.
    pub fn from_vectors(vecs: Vec<Vec<f64>>, prov: Provenance) -> Result<Self> {
        let dim = vecs.first().map_or(0, |v| v.len());
        if dim == 0 {
            return Err(Error::invalid("embedding set is empty"));
        }
        for (i, v) in vecs.iter().enumerate() {
            if v.len() != dim {
                return Err(Error::invalid(format!(
                    "vector {i} has dim {}, expected {dim}",
                    v.len()
                )));
            }
            if !v.iter().all(|x| x.is_finite()) {
                return Err(Error::invalid(format!("vector {i} is not finite")));
            }
        }
        let prov = vec![prov; vecs.len()];
        Ok(UnifiedEmbedding { dim, vecs, prov })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vecs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vecs.is_empty()
    }

    pub fn get(&self, item: u32) -> Result<&[f64]> {
        self.vecs
            .get(item as usize)
            .map(|v| v.as_slice())
            .ok_or_else(|| Error::invalid(format!("unknown item index {item}")))
    }

    pub fn provenance(&self, item: u32) -> Result<Provenance> {
        self.prov
            .get(item as usize)
            .copied()
            .ok_or_else(|| Error::invalid(format!("unknown item index {item}")))
    }

    /// Exports back to an id-keyed table in item-index order.
    pub fn to_table(&self, dataset: &Dataset) -> EmbeddingTable {
        EmbeddingTable::from_rows(
            self.dim,
            self.vecs
                .iter()
                .enumerate()
                .map(|(i, v)| (dataset.item_id(i as u32).to_string(), v.clone()))
                .collect(),
        )
        .expect("consistent rows")
    }
}

/// Merges the aligned table (unrelated items) and the surrogate table
/// (provider-touched items) into one space covering every dataset item.
pub fn unify_embeddings(
    dataset: &Dataset,
    aligned: &EmbeddingTable,
    surrogate: &EmbeddingTable,
) -> Result<UnifiedEmbedding> {
    if dataset.n_items() == 0 {
        return Err(Error::Dataset("dataset has no items".into()));
    }
    if !aligned.is_empty() && !surrogate.is_empty() && aligned.dim() != surrogate.dim() {
        return Err(Error::invalid(format!(
            "aligned dim {} does not match surrogate dim {}",
            aligned.dim(),
            surrogate.dim()
        )));
    }
    let dim = if surrogate.is_empty() {
        aligned.dim()
    } else {
        surrogate.dim()
    };
    let mut vecs: Vec<Option<(Vec<f64>, Provenance)>> = vec![None; dataset.n_items()];
    let mut place = |table: &EmbeddingTable, prov: Provenance| -> Result<()> {
        for (id, v) in table.iter() {
            let idx = dataset
                .item_idx(id)
                .ok_or_else(|| Error::missing("dataset item", id))? as usize;
            if vecs[idx].is_some() {
                return Err(Error::invalid(format!(
                    "item {id} appears in both embedding tables"
                )));
            }
            vecs[idx] = Some((v.to_vec(), prov));
        }
        Ok(())
    };
    place(surrogate, Provenance::Surrogate)?;
    place(aligned, Provenance::Aligned)?;
    let missing = vecs.iter().filter(|v| v.is_none()).count();
    if missing > 0 {
        return Err(Error::missing(
            "unified embedding",
            format!("{missing} items have no vector"),
        ));
    }
    let (vecs, prov) = vecs
        .into_iter()
        .map(|v| v.expect("checked"))
        .unzip();
    Ok(UnifiedEmbedding { dim, vecs, prov })
}

/// Euclidean distance between two items in the unified space.
pub fn item_distance(e: &UnifiedEmbedding, a: u32, b: u32) -> Result<f64> {
    Ok(euclidean(e.get(a)?, e.get(b)?))
}

/// Mean distance from `candidate` to every item in the list; the candidate
/// must be outside the list.
pub fn res(e: &UnifiedEmbedding, list: &[u32], candidate: u32) -> Result<f64> {
    if list.contains(&candidate) {
        return Err(Error::invalid(format!(
            "candidate {candidate} is already in the list"
        )));
    }
    if list.is_empty() {
        return Err(Error::invalid("res needs a nonempty list"));
    }
    let cv = e.get(candidate)?;
    let mut total = 0.0;
    for &it in list {
        total += euclidean(cv, e.get(it)?);
    }
    Ok(total / list.len() as f64)
}

/// Extends `list` to length `k2`: the original order is kept, then the
/// `k2 − K` candidates with smallest res are appended in ascending res order
/// (ties toward the lower item index). Returns (item, res) pairs with `None`
/// res for the original prefix.
pub fn augment_list(
    e: &UnifiedEmbedding,
    list: &[u32],
    candidates: &[u32],
    k2: usize,
) -> Result<Vec<(u32, Option<f64>)>> {
    if k2 < list.len() {
        return Err(Error::invalid(format!(
            "target length {k2} is shorter than the list ({})",
            list.len()
        )));
    }
    let need = k2 - list.len();
    let mut seen: Vec<u32> = list.to_vec();
    seen.sort_unstable();
    let mut scored: Vec<(f64, u32)> = Vec::new();
    for &c in candidates {
        if seen.binary_search(&c).is_ok() {
            continue;
        }
        // dedup repeated candidate entries
        if scored.iter().any(|&(_, x)| x == c) {
            continue;
        }
        scored.push((res(e, list, c)?, c));
    }
    if scored.len() < need {
        return Err(Error::invalid(format!(
            "need {need} novel candidates, only {} available",
            scored.len()
        )));
    }
    scored.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut out: Vec<(u32, Option<f64>)> = list.iter().map(|&i| (i, None)).collect();
    out.extend(scored.into_iter().take(need).map(|(r, i)| (i, Some(r))));
    Ok(out)
}

/// Augments every list in the set to `k2`, drawing candidates from the
/// whole catalogue minus the list itself (the analyst's view when user
/// histories are unknown). Rows come back in ascending user order.
pub fn augment_all_lists(
    e: &UnifiedEmbedding,
    lists: &RecListSet,
    n_items: usize,
    k2: usize,
) -> Result<Vec<(u32, Vec<(u32, Option<f64>)>)>> {
    lists
        .users()
        .into_iter()
        .map(|user| {
            let list = lists.get(user).expect("listed user");
            let candidates: Vec<u32> =
                (0..n_items as u32).filter(|i| !list.contains(i)).collect();
            Ok((user, augment_list(e, list, &candidates, k2)?))
        })
        .collect()
}

/// Pseudo-targets for alignment when no surrogate embeddings exist (no
/// interaction providers): each observed list's content centroid is pushed
/// through a seeded random projection into the target dimension, and each
/// item's target is the mean projected centroid over the lists containing
/// it. Items sharing lists thus share targets.
pub fn cooccurrence_targets(
    lists: &RecListSet,
    dataset: &Dataset,
    content: &EmbeddingTable,
    l3: usize,
    seed: u64,
) -> Result<EmbeddingTable> {
    if lists.is_empty() {
        return Err(Error::invalid("no observed lists to build targets from"));
    }
    let l2 = content.dim();
    let policy = SeedPolicy::new(seed);
    let normal = Normal::new(0.0, 1.0 / (l2 as f64).sqrt()).expect("valid std");
    let mut rng = policy.rng("align.fallback.projection");
    let proj = Mat::from_fn(l3, l2, |_, _| normal.sample(&mut rng));

    let mut sums: HashMap<u32, (Vec<f64>, usize)> = HashMap::new();
    let users = lists.users();
    for u in users {
        let list = lists.get(u).expect("listed user");
        let mut centroid = vec![0.0; l2];
        for &it in list {
            let id = dataset.item_id(it);
            let v = content
                .get(id)
                .ok_or_else(|| Error::missing("content embedding", id))?;
            axpy(1.0 / list.len() as f64, v, &mut centroid);
        }
        let projected = proj.mul_vec(&centroid);
        for &it in list {
            let entry = sums.entry(it).or_insert_with(|| (vec![0.0; l3], 0));
            axpy(1.0, &projected, &mut entry.0);
            entry.1 += 1;
        }
    }
    let mut items: Vec<u32> = sums.keys().copied().collect();
    items.sort_unstable();
    let entries = items
        .into_iter()
        .map(|it| {
            let (sum, count) = &sums[&it];
            let mut v = sum.clone();
            for x in &mut v {
                *x /= *count as f64;
            }
            (dataset.item_id(it).to_string(), v)
        })
        .collect();
    EmbeddingTable::from_rows(l3, entries)
}

/// Writes augmented lists as tab-delimited rows: user, 1-based rank, item,
/// source (original|augmented), res ("-" for original rows).
pub fn write_augmented_lists(
    path: &Path,
    dataset: &Dataset,
    lists: &[(u32, Vec<(u32, Option<f64>)>)],
) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    let mut emit = || -> std::io::Result<()> {
        writeln!(w, "user\trank\titem\tsource\tres")?;
        for (user, entries) in lists {
            for (rank, (item, r)) in entries.iter().enumerate() {
                let (source, res_text) = match r {
                    None => ("original", "-".to_string()),
                    Some(v) => ("augmented", format!("{v}")),
                };
                writeln!(
                    w,
                    "{}\t{}\t{}\t{}\t{}",
                    dataset.user_id(*user),
                    rank + 1,
                    dataset.item_id(*item),
                    source,
                    res_text
                )?;
            }
        }
        w.flush()
    };
    emit().map_err(|e| Error::io(path, e))
}
