//! Implicit-feedback recommenders trained with a pairwise ranking loss:
//! matrix factorization plus lite variants of NeuMF, NGCF, and LightGCN.
//! Gradients are hand-derived and exact, including backpropagation through
//! the graph propagation layers, so they can be checked against central
//! finite differences.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::ingest::{load_embedding_table, write_embedding_table, EmbeddingTable};
use crate::math::{axpy, dot, hadamard, matmul, matmul_tn, sigmoid, softplus, Mat};
use crate::seed::SeedPolicy;

/// The four supported model families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RecKind {
    Mf,
    NeuMf,
    Ngcf,
    LightGcn,
}

impl RecKind {
    pub fn all() -> [RecKind; 4] {
        [RecKind::Mf, RecKind::NeuMf, RecKind::Ngcf, RecKind::LightGcn]
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            RecKind::Mf => "mf",
            RecKind::NeuMf => "neumf",
            RecKind::Ngcf => "ngcf",
            RecKind::LightGcn => "lightgcn",
        }
    }

    fn uses_graph(&self) -> bool {
        matches!(self, RecKind::Ngcf | RecKind::LightGcn)
    }
}

impl std::fmt::Display for RecKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for RecKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mf" => Ok(RecKind::Mf),
            "neumf" => Ok(RecKind::NeuMf),
            "ngcf" => Ok(RecKind::Ngcf),
            "lightgcn" => Ok(RecKind::LightGcn),
            other => Err(Error::invalid(format!("unknown recommender kind {other:?}"))),
        }
    }
}

/// Hyperparameters for one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub dim: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Early-stop patience, counted in evaluations (one every `eval_every`
    /// epochs), not in epochs.
    pub patience: usize,
    pub eval_every: usize,
    pub eval_k: usize,
    pub negatives_per_positive: usize,
    /// Propagation depth for the graph models; ignored by MF and NeuMF.
    pub layers: usize,
    pub l2_reg: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 64,
            learning_rate: 0.01,
            batch_size: 256,
            max_epochs: 500,
            patience: 10,
            eval_every: 5,
            eval_k: 10,
            negatives_per_positive: 1,
            layers: 2,
            l2_reg: 1e-4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub(crate) fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::invalid("embedding dim must be positive"));
        }
        if self.learning_rate < 0.0 {
            return Err(Error::invalid("learning rate must be nonnegative"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if self.patience == 0 {
            return Err(Error::invalid("patience must be at least 1"));
        }
        if self.eval_every == 0 || self.eval_k == 0 || self.negatives_per_positive == 0 {
            return Err(Error::invalid(
                "eval_every, eval_k, and negatives_per_positive must be positive",
            ));
        }
        Ok(())
    }
}

/// Symmetrically normalized user–item adjacency over `m + n` nodes (users
/// first). Each stored edge weight is `1/sqrt(deg(a) * deg(b))`, so one
/// application of [`propagate`] multiplies by the normalized adjacency.
#[derive(Debug, Clone)]
pub struct BipartiteGraph {
    m: usize,
    n: usize,
    offsets: Vec<usize>,
    nbrs: Vec<(u32, f64)>,
}

impl BipartiteGraph {
    pub fn build(m: usize, n: usize, pairs: &[(u32, u32)]) -> Self {
        let nodes = m + n;
        let mut deg = vec![0usize; nodes];
        for &(u, i) in pairs {
            deg[u as usize] += 1;
            deg[m + i as usize] += 1;
        }
        let mut adj: Vec<Vec<(u32, f64)>> = vec![Vec::new(); nodes];
        for &(u, i) in pairs {
            let w = 1.0 / ((deg[u as usize] * deg[m + i as usize]) as f64).sqrt();
            adj[u as usize].push(((m + i as usize) as u32, w));
            adj[m + i as usize].push((u, w));
        }
        let mut offsets = Vec::with_capacity(nodes + 1);
        let mut nbrs = Vec::new();
        offsets.push(0);
        for mut row in adj {
            row.sort_unstable_by_key(|&(b, _)| b);
            nbrs.extend(row);
            offsets.push(nbrs.len());
        }
        BipartiteGraph { m, n, offsets, nbrs }
    }

    /// Computes normalized-adjacency × x (symmetric, so it serves both the
    /// forward propagation and its transpose in backpropagation).
    pub fn propagate(&self, x: &Mat) -> Mat {
        assert_eq!(x.rows(), self.m + self.n);
        let mut out = Mat::zeros(x.rows(), x.cols());
        for a in 0..x.rows() {
            for &(b, w) in &self.nbrs[self.offsets[a]..self.offsets[a + 1]] {
                let (dst, src) = (out.row_mut(a), x.row(b as usize));
                axpy(w, src, dst);
            }
        }
        out
    }
}

/// Kind-specific dense weights beyond the two embedding tables. The same
/// shape doubles as the gradient buffer.
#[derive(Debug, Clone, PartialEq)]
enum Extra {
    None,
    NeuMf {
        /// Hidden layer, `hidden × 2L`, applied to [user; item].
        w1: Mat,
        b1: Vec<f64>,
        /// Output weights over the hidden layer.
        w2: Vec<f64>,
        /// Output bias. Cancels in every score difference, so its gradient
        /// under the pairwise loss is identically zero.
        b2: f64,
    },
    Ngcf {
        /// Per propagation layer: self+neighbor transform.
        w1: Vec<Mat>,
        /// Per propagation layer: interaction-term transform.
        w2: Vec<Mat>,
    },
}

impl Extra {
    fn zeros_like(&self) -> Extra {
        match self {
            Extra::None => Extra::None,
            Extra::NeuMf { w1, b1, w2, .. } => Extra::NeuMf {
                w1: Mat::zeros(w1.rows(), w1.cols()),
                b1: vec![0.0; b1.len()],
                w2: vec![0.0; w2.len()],
                b2: 0.0,
            },
            Extra::Ngcf { w1, w2 } => Extra::Ngcf {
                w1: w1.iter().map(|m| Mat::zeros(m.rows(), m.cols())).collect(),
                w2: w2.iter().map(|m| Mat::zeros(m.rows(), m.cols())).collect(),
            },
        }
    }
}

/// Per-run training history.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean pairwise loss per epoch, in epoch order.
    pub epoch_losses: Vec<f64>,
    /// (epoch, validation hit-rate) at each evaluation.
    pub val_hitrate: Vec<(usize, f64)>,
    pub best_val_hitrate: Option<f64>,
    pub epochs_run: usize,
}

/// A trained (or freshly initialized) recommender. Base embeddings are the
/// free parameters; `final_user`/`final_item` cache the propagated
/// representations used for scoring (equal to the base tables for MF/NeuMF).
#[derive(Debug, Clone)]
pub struct RecommenderModel {
    kind: RecKind,
    cfg: TrainConfig,
    user_ids: Vec<String>,
    item_ids: Vec<String>,
    user_emb: Mat,
    item_emb: Mat,
    extra: Extra,
    graph: Option<BipartiteGraph>,
    final_user: Mat,
    final_item: Mat,
    pub log: TrainLog,
}

/// Intermediate state from one full forward pass, kept for backpropagation.
enum Forward {
    Plain,
    /// LightGCN: all layer outputs F^0..F^L.
    Light(Vec<Mat>),
    /// NGCF: layer outputs F^0..F^L and neighbor aggregates P^l = Â F^l.
    Ngcf { f: Vec<Mat>, p: Vec<Mat> },
}

impl RecommenderModel {
    /// Initializes parameters from Gaussian(0, 0.1) draws seeded by
    /// `cfg.seed`; graph kinds build their normalized adjacency from
    /// `train_pairs`.
    pub fn init(
        kind: RecKind,
        user_ids: Vec<String>,
        item_ids: Vec<String>,
        cfg: TrainConfig,
        train_pairs: &[(u32, u32)],
    ) -> Result<Self> {
        cfg.validate()?;
        let (m, n, dim) = (user_ids.len(), item_ids.len(), cfg.dim);
        let policy = SeedPolicy::new(cfg.seed);
        let normal = Normal::new(0.0, 0.1).expect("valid std");
        let draw = |stage: &str, rows: usize, cols: usize| {
            let mut rng = policy.rng(stage);
            Mat::from_fn(rows, cols, |_, _| normal.sample(&mut rng))
        };
        let user_emb = draw("rec.init.user", m, dim);
        let item_emb = draw("rec.init.item", n, dim);
        let extra = match kind {
            RecKind::Mf | RecKind::LightGcn => Extra::None,
            RecKind::NeuMf => {
                let hidden = 2 * dim;
                Extra::NeuMf {
                    w1: draw("rec.init.w1", hidden, 2 * dim),
                    b1: vec![0.0; hidden],
                    w2: draw("rec.init.w2", 1, hidden).row(0).to_vec(),
                    b2: 0.0,
                }
            }
            RecKind::Ngcf => Extra::Ngcf {
                w1: (0..cfg.layers)
                    .map(|l| draw(&format!("rec.init.ngcf_w1.{l}"), dim, dim))
                    .collect(),
                w2: (0..cfg.layers)
                    .map(|l| draw(&format!("rec.init.ngcf_w2.{l}"), dim, dim))
                    .collect(),
            },
        };
        let graph = kind
            .uses_graph()
            .then(|| BipartiteGraph::build(m, n, train_pairs));
        let mut model = RecommenderModel {
            kind,
            cfg,
            user_ids,
            item_ids,
            user_emb,
            item_emb,
            extra,
            graph,
            final_user: Mat::zeros(0, 0),
            final_item: Mat::zeros(0, 0),
            log: TrainLog::default(),
        };
        model.refresh_finals()?;
        Ok(model)
    }

    pub fn kind(&self) -> RecKind {
        self.kind
    }

    pub fn cfg(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn n_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn user_ids(&self) -> &[String] {
        &self.user_ids
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    /// Users then items, stacked into one (m+n) × L matrix.
    fn stacked(&self) -> Mat {
        let (m, n, dim) = (self.n_users(), self.n_items(), self.cfg.dim);
        let mut e = Mat::zeros(m + n, dim);
        e.data_mut()[..m * dim].copy_from_slice(self.user_emb.data());
        e.data_mut()[m * dim..].copy_from_slice(self.item_emb.data());
        e
    }

    fn forward(&self) -> Result<(Mat, Mat, Forward)> {
        match self.kind {
            RecKind::Mf | RecKind::NeuMf => {
                Ok((self.user_emb.clone(), self.item_emb.clone(), Forward::Plain))
            }
            RecKind::LightGcn => {
                let graph = self.graph.as_ref().ok_or_else(|| {
                    Error::Train("graph kind has no adjacency attached".into())
                })?;
                let mut layers = vec![self.stacked()];
                for _ in 0..self.cfg.layers {
                    layers.push(graph.propagate(layers.last().unwrap()));
                }
                let (fu, fi) = self.split_mean(&layers);
                Ok((fu, fi, Forward::Light(layers)))
            }
            RecKind::Ngcf => {
                let graph = self.graph.as_ref().ok_or_else(|| {
                    Error::Train("graph kind has no adjacency attached".into())
                })?;
                let (w1, w2) = match &self.extra {
                    Extra::Ngcf { w1, w2 } => (w1, w2),
                    _ => unreachable!(),
                };
                let mut f = vec![self.stacked()];
                let mut p = Vec::new();
                for l in 0..self.cfg.layers {
                    let fl = f.last().unwrap();
                    let pl = graph.propagate(fl);
                    // Z = (Â + I) F W1 + (Â F ⊙ F) W2, next layer = tanh(Z)
                    let mut sum = pl.clone();
                    for (s, v) in sum.data_mut().iter_mut().zip(fl.data()) {
                        *s += v;
                    }
                    let mut z = matmul(&sum, &w1[l]);
                    let inter = matmul(&hadamard(&pl, fl), &w2[l]);
                    for (zv, iv) in z.data_mut().iter_mut().zip(inter.data()) {
                        *zv += iv;
                    }
                    for v in z.data_mut() {
                        *v = v.tanh();
                    }
                    p.push(pl);
                    f.push(z);
                }
                let (fu, fi) = self.split_mean(&f);
                Ok((fu, fi, Forward::Ngcf { f, p }))
            }
        }
    }

    /// Mean over layer outputs, split back into user and item blocks.
    fn split_mean(&self, layers: &[Mat]) -> (Mat, Mat) {
        let (m, n, dim) = (self.n_users(), self.n_items(), self.cfg.dim);
        let c = 1.0 / layers.len() as f64;
        let mut mean = Mat::zeros(m + n, dim);
        for l in layers {
            for (o, v) in mean.data_mut().iter_mut().zip(l.data()) {
                *o += c * v;
            }
        }
        let mut fu = Mat::zeros(m, dim);
        let mut fi = Mat::zeros(n, dim);
        fu.data_mut().copy_from_slice(&mean.data()[..m * dim]);
        fi.data_mut().copy_from_slice(&mean.data()[m * dim..]);
        (fu, fi)
    }

    /// Recomputes the cached scoring representations from the current
    /// parameters.
    pub fn refresh_finals(&mut self) -> Result<()> {
        let (fu, fi, _) = self.forward()?;
        self.final_user = fu;
        self.final_item = fi;
        Ok(())
    }

    fn neumf_branch(&self, u: usize, i: usize) -> (f64, Vec<f64>) {
        let (w1, b1, w2, b2) = match &self.extra {
            Extra::NeuMf { w1, b1, w2, b2 } => (w1, b1, w2, *b2),
            _ => unreachable!(),
        };
        let p = self.user_emb.row(u);
        let q = self.item_emb.row(i);
        let mut concat = Vec::with_capacity(2 * self.cfg.dim);
        concat.extend_from_slice(p);
        concat.extend_from_slice(q);
        let mut t = w1.mul_vec(&concat);
        for (h, v) in t.iter_mut().enumerate() {
            *v = (*v + b1[h]).tanh();
        }
        (dot(p, q) + dot(w2, &t) + b2, t)
    }

    fn score_idx(&self, u: usize, i: usize) -> f64 {
        match self.kind {
            RecKind::NeuMf => self.neumf_branch(u, i).0,
            _ => dot(self.final_user.row(u), self.final_item.row(i)),
        }
    }

    /// Preference score for one (user, item) pair.
    pub fn score(&self, user: u32, item: u32) -> Result<f64> {
        if user as usize >= self.n_users() {
            return Err(Error::invalid(format!("unknown user index {user}")));
        }
        if item as usize >= self.n_items() {
            return Err(Error::invalid(format!("unknown item index {item}")));
        }
        Ok(self.score_idx(user as usize, item as usize))
    }

    /// Top-K items for `user` by descending score, skipping `exclude`; equal
    /// scores break toward the lower item index.
    pub fn recommend_topk(&self, user: u32, k: usize, exclude: &[u32]) -> Result<Vec<u32>> {
        if user as usize >= self.n_users() {
            return Err(Error::invalid(format!("unknown user index {user}")));
        }
        let n = self.n_items();
        let mut skip = vec![false; n];
        for &e in exclude {
            if (e as usize) < n {
                skip[e as usize] = true;
            }
        }
        let available = skip.iter().filter(|s| !**s).count();
        if k > available {
            return Err(Error::invalid(format!(
                "requested top-{k} but only {available} items are available"
            )));
        }
        let mut scored: Vec<(f64, u32)> = (0..n)
            .filter(|&i| !skip[i])
            .map(|i| (self.score_idx(user as usize, i), i as u32))
            .collect();
        scored.sort_unstable_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        Ok(scored.into_iter().take(k).map(|(_, i)| i).collect())
    }

    /// The item representations used for scoring, keyed by external item id:
    /// stored factors for MF/NeuMF, layer-averaged propagated embeddings for
    /// the graph kinds.
    pub fn export_item_embeddings(&self) -> EmbeddingTable {
        let entries = self
            .item_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), self.final_item.row(i).to_vec()))
            .collect();
        EmbeddingTable::from_rows(self.cfg.dim, entries).expect("rows are consistent")
    }

    /// All trainable parameters flattened in a fixed order: user embeddings,
    /// item embeddings, then kind-specific weights.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend_from_slice(self.user_emb.data());
        out.extend_from_slice(self.item_emb.data());
        push_extra(&self.extra, &mut out);
        out
    }

    /// Inverse of [`params_flat`]; refreshes the scoring caches.
    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        let expected = self.params_flat().len();
        if flat.len() != expected {
            return Err(Error::invalid(format!(
                "parameter vector has {} entries, model needs {expected}",
                flat.len()
            )));
        }
        self.set_params_flat_no_refresh(flat);
        self.refresh_finals()
    }

    /// Mean pairwise loss over `(user, positive, negative)` triples:
    /// softplus(-(s_ui - s_uj)) plus L2 on the three base embedding rows.
    pub fn triple_loss(&self, triples: &[(u32, u32, u32)], l2: f64) -> Result<f64> {
        let (fu, fi, _) = self.forward()?;
        let mut loss = 0.0;
        for &(u, i, j) in triples {
            let (u, i, j) = (u as usize, i as usize, j as usize);
            let x = match self.kind {
                RecKind::NeuMf => self.neumf_branch(u, i).0 - self.neumf_branch(u, j).0,
                _ => dot(fu.row(u), fi.row(i)) - dot(fu.row(u), fi.row(j)),
            };
            loss += softplus(-x) + l2 * self.reg_term(u, i, j);
        }
        Ok(loss / triples.len() as f64)
    }

    fn reg_term(&self, u: usize, i: usize, j: usize) -> f64 {
        let sq = |v: &[f64]| dot(v, v);
        sq(self.user_emb.row(u)) + sq(self.item_emb.row(i)) + sq(self.item_emb.row(j))
    }

    /// Loss plus its exact gradient, flattened in [`params_flat`] order.
    pub fn triple_loss_and_grad(&self, triples: &[(u32, u32, u32)], l2: f64) -> Result<(f64, Vec<f64>)> {
        let (fu, fi, fwd) = self.forward()?;
        let (m, n, dim) = (self.n_users(), self.n_items(), self.cfg.dim);
        let inv_b = 1.0 / triples.len() as f64;
        let mut loss = 0.0;
        let mut g_user = Mat::zeros(m, dim);
        let mut g_item = Mat::zeros(n, dim);
        let mut g_extra = self.extra.zeros_like();
        // For graph kinds: gradient of the pair losses w.r.t. the final
        // stacked representations, to be pulled back through propagation.
        let mut d_final = Mat::zeros(if self.kind.uses_graph() { m + n } else { 0 }, dim);

        for &(u, i, j) in triples {
            let (u, i, j) = (u as usize, i as usize, j as usize);
            match self.kind {
                RecKind::Mf => {
                    let x = dot(fu.row(u), fi.row(i)) - dot(fu.row(u), fi.row(j));
                    loss += softplus(-x);
                    let g = -sigmoid(-x);
                    let (pu, qi, qj) = (self.user_emb.row(u), self.item_emb.row(i), self.item_emb.row(j));
                    let mut diff = qi.to_vec();
                    axpy(-1.0, qj, &mut diff);
                    axpy(g, &diff, g_user.row_mut(u));
                    axpy(g, pu, g_item.row_mut(i));
                    axpy(-g, pu, g_item.row_mut(j));
                }
                RecKind::NeuMf => {
                    let (si, ti) = self.neumf_branch(u, i);
                    let (sj, tj) = self.neumf_branch(u, j);
                    let x = si - sj;
                    loss += softplus(-x);
                    let g = -sigmoid(-x);
                    let (w1, w2) = match &self.extra {
                        Extra::NeuMf { w1, w2, .. } => (w1, w2),
                        _ => unreachable!(),
                    };
                    let (gw1, gb1, gw2) = match &mut g_extra {
                        Extra::NeuMf { w1, b1, w2, .. } => (w1, b1, w2),
                        _ => unreachable!(),
                    };
                    let (pu, qi, qj) = (self.user_emb.row(u), self.item_emb.row(i), self.item_emb.row(j));
                    // a[h] = w2[h] * tanh'(pre-activation) for each branch
                    let ai: Vec<f64> = ti.iter().zip(w2).map(|(t, w)| w * (1.0 - t * t)).collect();
                    let aj: Vec<f64> = tj.iter().zip(w2).map(|(t, w)| w * (1.0 - t * t)).collect();
                    for h in 0..w2.len() {
                        gw2[h] += g * (ti[h] - tj[h]);
                        gb1[h] += g * (ai[h] - aj[h]);
                        let row = gw1.row_mut(h);
                        for c in 0..dim {
                            row[c] += g * (ai[h] - aj[h]) * pu[c];
                            row[dim + c] += g * (ai[h] * qi[c] - aj[h] * qj[c]);
                        }
                    }
                    // dp = (qi - qj) + Σ_h (ai - aj)[h] · W1[h, :dim]
                    let gp = g_user.row_mut(u);
                    for c in 0..dim {
                        let mut acc = qi[c] - qj[c];
                        for h in 0..w2.len() {
                            acc += (ai[h] - aj[h]) * w1.at(h, c);
                        }
                        gp[c] += g * acc;
                    }
                    for c in 0..dim {
                        let mut acc_i = pu[c];
                        let mut acc_j = pu[c];
                        for h in 0..w2.len() {
                            acc_i += ai[h] * w1.at(h, dim + c);
                            acc_j += aj[h] * w1.at(h, dim + c);
                        }
                        g_item.row_mut(i)[c] += g * acc_i;
                        g_item.row_mut(j)[c] -= g * acc_j;
                    }
                }
                RecKind::Ngcf | RecKind::LightGcn => {
                    let x = dot(fu.row(u), fi.row(i)) - dot(fu.row(u), fi.row(j));
                    loss += softplus(-x);
                    let g = -sigmoid(-x);
                    let mut diff = fi.row(i).to_vec();
                    axpy(-1.0, fi.row(j), &mut diff);
                    axpy(g, &diff, d_final.row_mut(u));
                    axpy(g, fu.row(u), d_final.row_mut(m + i));
                    axpy(-g, fu.row(u), d_final.row_mut(m + j));
                }
            }
            loss += l2 * self.reg_term(u, i, j);
            axpy(2.0 * l2, self.user_emb.row(u), g_user.row_mut(u));
            axpy(2.0 * l2, self.item_emb.row(i), g_item.row_mut(i));
            axpy(2.0 * l2, self.item_emb.row(j), g_item.row_mut(j));
        }

        if self.kind.uses_graph() {
            let graph = self.graph.as_ref().expect("checked in forward");
            let d_base = match (&fwd, &mut g_extra) {
                (Forward::Light(layers), _) => backward_lightgcn(graph, layers, &d_final),
                (Forward::Ngcf { f, p }, Extra::Ngcf { w1: gw1, w2: gw2 }) => {
                    let (w1, w2) = match &self.extra {
                        Extra::Ngcf { w1, w2 } => (w1, w2),
                        _ => unreachable!(),
                    };
                    backward_ngcf(graph, f, p, w1, w2, gw1, gw2, &d_final)
                }
                _ => unreachable!(),
            };
            for r in 0..m {
                axpy(1.0, d_base.row(r), g_user.row_mut(r));
            }
            for r in 0..n {
                axpy(1.0, d_base.row(m + r), g_item.row_mut(r));
            }
        }

        let mut flat = Vec::new();
        flat.extend_from_slice(g_user.data());
        flat.extend_from_slice(g_item.data());
        push_extra(&g_extra, &mut flat);
        for v in &mut flat {
            *v *= inv_b;
        }
        Ok((loss * inv_b, flat))
    }

    /// θ ← θ + alpha · grad (callers pass alpha = −learning_rate); errors if
    /// any parameter stops being finite.
    fn apply_step(&mut self, alpha: f64, grad: &[f64]) -> Result<()> {
        let mut params = self.params_flat();
        axpy(alpha, grad, &mut params);
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::Train(
                "training diverged: non-finite parameter after update".into(),
            ));
        }
        // Scoring caches are refreshed lazily at evaluation time, not per step.
        self.set_params_flat_no_refresh(&params);
        Ok(())
    }

    fn set_params_flat_no_refresh(&mut self, flat: &[f64]) {
        let mut pos = 0;
        let mut take = |dst: &mut [f64]| {
            dst.copy_from_slice(&flat[pos..pos + dst.len()]);
            pos += dst.len();
        };
        take(self.user_emb.data_mut());
        take(self.item_emb.data_mut());
        match &mut self.extra {
            Extra::None => {}
            Extra::NeuMf { w1, b1, w2, b2 } => {
                take(w1.data_mut());
                take(b1);
                take(w2);
                let mut s = [*b2];
                take(&mut s);
                *b2 = s[0];
            }
            Extra::Ngcf { w1, w2 } => {
                for m in w1.iter_mut().chain(w2.iter_mut()) {
                    take(m.data_mut());
                }
            }
        }
    }

    /// Writes the checkpoint: a JSON manifest plus one embedding-table text
    /// file per parameter group, including the propagated scoring tables so
    /// a loaded model can score without the training graph.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = Manifest {
            kind: self.kind.to_string(),
            m: self.n_users(),
            n: self.n_items(),
            cfg: self.cfg.clone(),
            log: self.log.clone(),
        };
        let path = dir.join("manifest.json");
        fs::write(
            &path,
            serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
        )
        .map_err(|e| Error::io(&path, e))?;
        let table = |ids: &[String], mat: &Mat| {
            EmbeddingTable::from_rows(
                mat.cols(),
                ids.iter()
                    .enumerate()
                    .map(|(r, id)| (id.clone(), mat.row(r).to_vec()))
                    .collect(),
            )
            .expect("consistent rows")
        };
        write_embedding_table(&dir.join("user_emb.txt"), &table(&self.user_ids, &self.user_emb))?;
        write_embedding_table(&dir.join("item_emb.txt"), &table(&self.item_ids, &self.item_emb))?;
        write_embedding_table(&dir.join("final_user.txt"), &table(&self.user_ids, &self.final_user))?;
        write_embedding_table(&dir.join("final_item.txt"), &table(&self.item_ids, &self.final_item))?;
        match &self.extra {
            Extra::None => {}
            Extra::NeuMf { w1, b1, w2, b2 } => {
                let rows = |mat: &Mat, prefix: &str| {
                    EmbeddingTable::from_rows(
                        mat.cols(),
                        (0..mat.rows())
                            .map(|r| (format!("{prefix}{r}"), mat.row(r).to_vec()))
                            .collect(),
                    )
                    .expect("consistent rows")
                };
                write_embedding_table(&dir.join("neumf_w1.txt"), &rows(w1, "h"))?;
                let vecs = EmbeddingTable::from_rows(
                    b1.len(),
                    vec![("b1".into(), b1.clone()), ("w2".into(), w2.clone())],
                )
                .expect("consistent rows");
                write_embedding_table(&dir.join("neumf_vec.txt"), &vecs)?;
                let b2t = EmbeddingTable::from_rows(1, vec![("b2".into(), vec![*b2])])
                    .expect("consistent rows");
                write_embedding_table(&dir.join("neumf_b2.txt"), &b2t)?;
            }
            Extra::Ngcf { w1, w2 } => {
                let rows = |mat: &Mat| {
                    EmbeddingTable::from_rows(
                        mat.cols(),
                        (0..mat.rows())
                            .map(|r| (format!("r{r}"), mat.row(r).to_vec()))
                            .collect(),
                    )
                    .expect("consistent rows")
                };
                for (l, (a, b)) in w1.iter().zip(w2).enumerate() {
                    write_embedding_table(&dir.join(format!("ngcf_w1_{l}.txt")), &rows(a))?;
                    write_embedding_table(&dir.join(format!("ngcf_w2_{l}.txt")), &rows(b))?;
                }
            }
        }
        Ok(())
    }

    /// Loads a checkpoint written by [`save`]. The training graph is not
    /// part of the checkpoint, so a loaded graph model can score and export
    /// but not resume training.
    pub fn load(dir: &Path) -> Result<RecommenderModel> {
        let path = dir.join("manifest.json");
        let raw = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&raw)
            .map_err(|e| Error::parse(&path, 1, format!("bad manifest: {e}")))?;
        let kind: RecKind = manifest.kind.parse()?;
        let read_mat = |name: &str| -> Result<(Vec<String>, Mat)> {
            let t = load_embedding_table(&dir.join(name))?;
            let mut mat = Mat::zeros(t.len(), t.dim());
            for (r, (_, v)) in t.iter().enumerate() {
                mat.row_mut(r).copy_from_slice(v);
            }
            Ok((t.ids().to_vec(), mat))
        };
        let (user_ids, user_emb) = read_mat("user_emb.txt")?;
        let (item_ids, item_emb) = read_mat("item_emb.txt")?;
        let (_, final_user) = read_mat("final_user.txt")?;
        let (_, final_item) = read_mat("final_item.txt")?;
        if user_ids.len() != manifest.m || item_ids.len() != manifest.n {
            return Err(Error::invalid(
                "checkpoint table sizes disagree with the manifest",
            ));
        }
        let extra = match kind {
            RecKind::Mf | RecKind::LightGcn => Extra::None,
            RecKind::NeuMf => {
                let (_, w1) = read_mat("neumf_w1.txt")?;
                let vecs = load_embedding_table(&dir.join("neumf_vec.txt"))?;
                let b1 = vecs
                    .get("b1")
                    .ok_or_else(|| Error::missing("checkpoint row", "b1"))?
                    .to_vec();
                let w2 = vecs
                    .get("w2")
                    .ok_or_else(|| Error::missing("checkpoint row", "w2"))?
                    .to_vec();
                let b2t = load_embedding_table(&dir.join("neumf_b2.txt"))?;
                let b2 = b2t
                    .get("b2")
                    .ok_or_else(|| Error::missing("checkpoint row", "b2"))?[0];
                Extra::NeuMf { w1, b1, w2, b2 }
            }
            RecKind::Ngcf => {
                let mut w1 = Vec::new();
                let mut w2 = Vec::new();
                for l in 0..manifest.cfg.layers {
                    w1.push(read_mat(&format!("ngcf_w1_{l}.txt"))?.1);
                    w2.push(read_mat(&format!("ngcf_w2_{l}.txt"))?.1);
                }
                Extra::Ngcf { w1, w2 }
            }
        };
        Ok(RecommenderModel {
            kind,
            cfg: manifest.cfg,
            user_ids,
            item_ids,
            user_emb,
            item_emb,
            extra,
            graph: None,
            final_user,
            final_item,
            log: manifest.log,
        })
    }
}

fn push_extra(extra: &Extra, out: &mut Vec<f64>) {
    match extra {
        Extra::None => {}
        Extra::NeuMf { w1, b1, w2, b2 } => {
            out.extend_from_slice(w1.data());
            out.extend_from_slice(b1);
            out.extend_from_slice(w2);
            out.push(*b2);
        }
        Extra::Ngcf { w1, w2 } => {
            for m in w1.iter().chain(w2) {
                out.extend_from_slice(m.data());
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    kind: String,
    m: usize,
    n: usize,
    cfg: TrainConfig,
    #[serde(default)]
    log: TrainLog,
}

/// Pulls the gradient at the layer-mean output back to the base embeddings:
/// T_l = c·D + Â·T_{l+1}, with c = 1/(#layers+1) and Â symmetric.
fn backward_lightgcn(graph: &BipartiteGraph, layers: &[Mat], d_final: &Mat) -> Mat {
    let c = 1.0 / layers.len() as f64;
    let mut t = d_final.clone();
    for v in t.data_mut() {
        *v *= c;
    }
    for _ in 1..layers.len() {
        let mut next = graph.propagate(&t);
        for (nv, dv) in next.data_mut().iter_mut().zip(d_final.data()) {
            *nv += c * dv;
        }
        t = next;
    }
    t
}

/// Exact backward pass through the NGCF propagation
/// F^{l+1} = tanh((Â+I) F^l W1_l + (Â F^l ⊙ F^l) W2_l), accumulating the
/// per-layer weight gradients and returning dLoss/dF^0.
#[allow(clippy::too_many_arguments)]
fn backward_ngcf(
    graph: &BipartiteGraph,
    f: &[Mat],
    p: &[Mat],
    w1: &[Mat],
    w2: &[Mat],
    gw1: &mut [Mat],
    gw2: &mut [Mat],
    d_final: &Mat,
) -> Mat {
    let n_layers = f.len() - 1;
    let c = 1.0 / f.len() as f64;
    let mut t = d_final.clone();
    for v in t.data_mut() {
        *v *= c;
    }
    for l in (0..n_layers).rev() {
        // G = T_{l+1} ⊙ (1 - F_{l+1}²)   (tanh' written via the activation)
        let mut g = t.clone();
        for (gv, fv) in g.data_mut().iter_mut().zip(f[l + 1].data()) {
            *gv *= 1.0 - fv * fv;
        }
        // sum = (Â+I) F^l = P^l + F^l feeds both weight gradients
        let mut sum = p[l].clone();
        for (s, v) in sum.data_mut().iter_mut().zip(f[l].data()) {
            *s += v;
        }
        let d1 = matmul_tn(&sum, &g);
        for (a, b) in gw1[l].data_mut().iter_mut().zip(d1.data()) {
            *a += b;
        }
        let d2 = matmul_tn(&hadamard(&p[l], &f[l]), &g);
        for (a, b) in gw2[l].data_mut().iter_mut().zip(d2.data()) {
            *a += b;
        }
        // T_l = c·D + (Â+I)(G W1ᵀ) + Â(H ⊙ F^l) + H ⊙ P^l, H = G W2ᵀ
        let gw1t = matmul(&g, &transpose(&w1[l]));
        let h = matmul(&g, &transpose(&w2[l]));
        let mut next = graph.propagate(&gw1t);
        for (nv, v) in next.data_mut().iter_mut().zip(gw1t.data()) {
            *nv += v;
        }
        let hf = hadamard(&h, &f[l]);
        let prop_hf = graph.propagate(&hf);
        let hp = hadamard(&h, &p[l]);
        for i in 0..next.data().len() {
            next.data_mut()[i] += prop_hf.data()[i] + hp.data()[i] + c * d_final.data()[i];
        }
        t = next;
    }
    t
}

fn transpose(m: &Mat) -> Mat {
    Mat::from_fn(m.cols(), m.rows(), |r, c| m.at(c, r))
}

/// Uniform negative sampling with rejection against the user's positives
/// (sorted); falls back to a linear scan if rejection keeps missing.
fn sample_negative(rng: &mut ChaCha8Rng, n_items: usize, pos: &[u32]) -> Option<u32> {
    if pos.len() >= n_items {
        return None;
    }
    for _ in 0..64 {
        let cand = rng.random_range(0..n_items as u32);
        if pos.binary_search(&cand).is_err() {
            return Some(cand);
        }
    }
    let start = rng.random_range(0..n_items as u32);
    for off in 0..n_items as u32 {
        let cand = (start + off) % n_items as u32;
        if pos.binary_search(&cand).is_err() {
            return Some(cand);
        }
    }
    None
}

/// Fraction of validation users whose top-`k` list (train items excluded)
/// contains at least one of their validation items.
pub fn hit_rate_at_k(
    model: &RecommenderModel,
    train_pos: &[Vec<u32>],
    val_items: &[Vec<u32>],
    k: usize,
) -> f64 {
    let mut users = 0usize;
    let mut hits = 0usize;
    for (u, vals) in val_items.iter().enumerate() {
        if vals.is_empty() {
            continue;
        }
        let k_eff = k.min(model.n_items().saturating_sub(train_pos[u].len()));
        if k_eff == 0 {
            continue;
        }
        users += 1;
        let list = model
            .recommend_topk(u as u32, k_eff, &train_pos[u])
            .expect("bounded k");
        if vals.iter().any(|v| list.contains(v)) {
            hits += 1;
        }
    }
    if users == 0 {
        0.0
    } else {
        hits as f64 / users as f64
    }
}

/// Trains one recommender with minibatch SGD on the pairwise ranking loss,
/// uniform negative sampling, and early stopping on validation hit-rate.
/// Deterministic for a fixed (dataset, split, cfg) in serial mode.
pub fn train_recommender(
    dataset: &Dataset,
    split: &Split,
    cfg: &TrainConfig,
    kind: RecKind,
) -> Result<RecommenderModel> {
    if split.train.is_empty() {
        return Err(Error::Train("train split is empty".into()));
    }
    cfg.validate()?;
    let pairs: Vec<(u32, u32)> = split
        .train
        .iter()
        .map(|&ix| {
            let it = dataset.interactions()[ix];
            (it.user, it.item)
        })
        .collect();
    let user_ids: Vec<String> = (0..dataset.n_users() as u32)
        .map(|u| dataset.user_id(u).to_string())
        .collect();
    let item_ids: Vec<String> = (0..dataset.n_items() as u32)
        .map(|i| dataset.item_id(i).to_string())
        .collect();
    let mut model = RecommenderModel::init(kind, user_ids, item_ids, cfg.clone(), &pairs)?;
    let train_pos = dataset.user_items_from(&split.train);
    let val_items = dataset.user_items_from(&split.validation);
    let has_validation = split.validation.len() > 0;
    let policy = SeedPolicy::new(cfg.seed);
    let n_items = dataset.n_items();

    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut evals_since_best = 0usize;
    for epoch in 0..cfg.max_epochs {
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut policy.rng_indexed("rec.shuffle", epoch as u64));
        let mut neg_rng = policy.rng_indexed("rec.neg", epoch as u64);
        let mut epoch_loss = 0.0;
        let mut counted = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let mut triples = Vec::with_capacity(batch.len() * cfg.negatives_per_positive);
            for &ix in batch {
                let (u, i) = pairs[ix];
                for _ in 0..cfg.negatives_per_positive {
                    if let Some(j) = sample_negative(&mut neg_rng, n_items, &train_pos[u as usize])
                    {
                        triples.push((u, i, j));
                    }
                }
            }
            if triples.is_empty() {
                continue;
            }
            let (loss, grad) = model.triple_loss_and_grad(&triples, cfg.l2_reg)?;
            if !loss.is_finite() {
                return Err(Error::Train(format!(
                    "training diverged: non-finite loss at epoch {epoch}"
                )));
            }
            // The gradient is a mean over the batch; scaling the step by the
            // batch size makes each triple contribute a full per-sample step,
            // which is what the configured learning-rate range is sized for.
            model.apply_step(-cfg.learning_rate * triples.len() as f64, &grad)?;
            epoch_loss += loss * triples.len() as f64;
            counted += triples.len();
        }
        model.log.epoch_losses.push(epoch_loss / counted.max(1) as f64);
        model.log.epochs_run = epoch + 1;

        if has_validation && (epoch + 1) % cfg.eval_every == 0 {
            model.refresh_finals()?;
            let hr = hit_rate_at_k(&model, &train_pos, &val_items, cfg.eval_k);
            model.log.val_hitrate.push((epoch + 1, hr));
            let improved = best.as_ref().map_or(true, |(b, _)| hr > *b);
            if improved {
                best = Some((hr, model.params_flat()));
                evals_since_best = 0;
            } else {
                evals_since_best += 1;
                if evals_since_best >= cfg.patience {
                    break;
                }
            }
        }
    }
    if let Some((hr, params)) = best {
        model.set_params_flat(&params)?;
        model.log.best_val_hitrate = Some(hr);
    } else {
        model.refresh_finals()?;
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::split_dataset;
    use crate::ingest::{generate_synthetic, SyntheticSpec};
    use approx::assert_abs_diff_eq;

    fn tiny_cfg(dim: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            dim,
            learning_rate: 0.05,
            batch_size: 128,
            max_epochs: 30,
            eval_every: 5,
            patience: 3,
            seed,
            ..TrainConfig::default()
        }
    }

    fn ids(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|k| format!("{prefix}{k}")).collect()
    }

    fn toy_model(kind: RecKind, m: usize, n: usize, dim: usize, seed: u64) -> RecommenderModel {
        let pairs: Vec<(u32, u32)> = (0..m as u32)
            .flat_map(|u| (0..n as u32).filter(move |i| (u + i) % 3 != 0).map(move |i| (u, i)))
            .collect();
        RecommenderModel::init(kind, ids("u", m), ids("i", n), tiny_cfg(dim, seed), &pairs)
            .unwrap()
    }

    #[test]
    fn mf_score_is_dot_product() {
        let mut model = toy_model(RecKind::Mf, 1, 1, 2, 0);
        model.set_params_flat(&[1.0, 0.0, 0.5, 2.0]).unwrap();
        assert_abs_diff_eq!(model.score(0, 0).unwrap(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn zero_user_vector_scores_zero() {
        let mut model = toy_model(RecKind::Mf, 1, 3, 2, 0);
        let mut params = model.params_flat();
        params[0] = 0.0;
        params[1] = 0.0;
        model.set_params_flat(&params).unwrap();
        for i in 0..3 {
            assert_eq!(model.score(0, i).unwrap(), 0.0);
        }
    }

    #[test]
    fn topk_orders_hand_set_scores() {
        let mut model = toy_model(RecKind::Mf, 1, 3, 1, 0);
        // user vector 1.0; item scores 0.9, 0.2, 0.5
        model.set_params_flat(&[1.0, 0.9, 0.2, 0.5]).unwrap();
        assert_eq!(model.recommend_topk(0, 2, &[]).unwrap(), vec![0, 2]);
        // K = N - |exclude| exhausts the candidates in full order
        assert_eq!(model.recommend_topk(0, 3, &[]).unwrap(), vec![0, 2, 1]);
        assert_eq!(model.recommend_topk(0, 2, &[0]).unwrap(), vec![2, 1]);
    }

    #[test]
    fn topk_breaks_ties_by_item_id() {
        let mut model = toy_model(RecKind::Mf, 1, 4, 1, 0);
        model.set_params_flat(&[1.0, 0.5, 0.7, 0.5, 0.7]).unwrap();
        assert_eq!(model.recommend_topk(0, 4, &[]).unwrap(), vec![1, 3, 0, 2]);
    }

    #[test]
    fn topk_rejects_bad_requests() {
        let model = toy_model(RecKind::Mf, 2, 3, 2, 0);
        assert!(model.recommend_topk(9, 1, &[]).is_err());
        assert!(model.recommend_topk(0, 3, &[1]).is_err());
        assert!(model.score(0, 99).is_err());
    }

    #[test]
    fn topk_is_consistent_with_score() {
        let model = toy_model(RecKind::NeuMf, 3, 8, 4, 7);
        let list = model.recommend_topk(1, 8, &[]).unwrap();
        let scores: Vec<f64> = list.iter().map(|&i| model.score(1, i).unwrap()).collect();
        for w in scores.windows(2) {
            assert!(w[0] >= w[1]);
        }
    }

    #[test]
    fn mf_export_equals_item_factors() {
        let model = toy_model(RecKind::Mf, 2, 3, 4, 1);
        let table = model.export_item_embeddings();
        for i in 0..3usize {
            assert_eq!(table.get(&format!("i{i}")).unwrap(), model.item_emb.row(i));
        }
    }

    #[test]
    fn lightgcn_zero_layers_exports_initial_factors() {
        let pairs = vec![(0, 0), (0, 1)];
        let cfg = TrainConfig {
            layers: 0,
            ..tiny_cfg(3, 5)
        };
        let model =
            RecommenderModel::init(RecKind::LightGcn, ids("u", 1), ids("i", 2), cfg, &pairs)
                .unwrap();
        let table = model.export_item_embeddings();
        assert_eq!(table.get("i0").unwrap(), model.item_emb.row(0));
        assert_eq!(table.get("i1").unwrap(), model.item_emb.row(1));
    }

    #[test]
    fn lightgcn_two_layer_propagation_matches_hand_compute() {
        // one user connected to both items: d_u = 2, d_i0 = d_i1 = 1
        let pairs = vec![(0, 0), (0, 1)];
        let cfg = TrainConfig {
            layers: 2,
            ..tiny_cfg(2, 5)
        };
        let mut model =
            RecommenderModel::init(RecKind::LightGcn, ids("u", 1), ids("i", 2), cfg, &pairs)
                .unwrap();
        let p = [1.0, 2.0];
        let q0 = [0.5, -1.0];
        let q1 = [3.0, 0.25];
        model
            .set_params_flat(&[p[0], p[1], q0[0], q0[1], q1[0], q1[1]])
            .unwrap();
        let s = 1.0 / 2f64.sqrt();
        for c in 0..2 {
            // layer 1: u ← (q0+q1)/√2; i ← p/√2. layer 2: u ← p; i ← (q0+q1)/2
            let u1 = s * (q0[c] + q1[c]);
            let i0_1 = s * p[c];
            let u2 = s * (i0_1 + s * p[c]);
            let i0_2 = s * u1;
            let fu = (p[c] + u1 + u2) / 3.0;
            let fi0 = (q0[c] + i0_1 + i0_2) / 3.0;
            assert_abs_diff_eq!(model.final_user.at(0, c), fu, epsilon = 1e-12);
            assert_abs_diff_eq!(model.final_item.at(0, c), fi0, epsilon = 1e-12);
        }
    }

    /// Central finite differences over every parameter, compared to the
    /// analytic gradient with relative tolerance 1e-4.
    fn check_gradients(kind: RecKind, dim: usize, seed: u64) {
        let model = toy_model(kind, 4, 6, dim, seed);
        let triples = vec![(0, 1, 2), (1, 0, 5), (3, 4, 0), (2, 2, 3)];
        let l2 = 1e-4;
        let (_, grad) = model.triple_loss_and_grad(&triples, l2).unwrap();
        let params = model.params_flat();
        assert_eq!(grad.len(), params.len());
        let h = 1e-4;
        let mut probe = model.clone();
        for k in 0..params.len() {
            let mut plus = params.clone();
            plus[k] += h;
            probe.set_params_flat(&plus).unwrap();
            let lp = probe.triple_loss(&triples, l2).unwrap();
            let mut minus = params.clone();
            minus[k] -= h;
            probe.set_params_flat(&minus).unwrap();
            let lm = probe.triple_loss(&triples, l2).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            let denom = grad[k].abs().max(fd.abs()).max(1.0);
            assert!(
                (grad[k] - fd).abs() / denom < 1e-4,
                "{kind} param {k}: analytic {} vs fd {fd}",
                grad[k]
            );
        }
    }

    #[test]
    fn mf_gradients_match_finite_differences() {
        for seed in [1, 2, 3, 4, 5] {
            check_gradients(RecKind::Mf, 3, seed);
        }
    }

    #[test]
    fn neumf_gradients_match_finite_differences() {
        for seed in [1, 2, 3, 4, 5] {
            check_gradients(RecKind::NeuMf, 3, seed);
        }
    }

    #[test]
    fn ngcf_gradients_match_finite_differences() {
        for seed in [1, 2, 3, 4, 5] {
            check_gradients(RecKind::Ngcf, 3, seed);
        }
    }

    #[test]
    fn lightgcn_gradients_match_finite_differences() {
        for seed in [1, 2, 3, 4, 5] {
            check_gradients(RecKind::LightGcn, 3, seed);
        }
    }

    fn planted(seed: u64) -> (crate::ingest::Synthetic, Split) {
        let spec = SyntheticSpec {
            n_users: 60,
            n_items: 40,
            n_clusters: 2,
            attribute_name: "cluster".into(),
            cluster_affinity: 1.0,
            interactions_per_user: 10,
        };
        let s = generate_synthetic(&spec, seed).unwrap();
        let split = split_dataset(&s.dataset, (0.8, 0.1, 0.1), seed).unwrap();
        (s, split)
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let (s, split) = planted(3);
        let cfg = TrainConfig {
            learning_rate: 0.0,
            max_epochs: 1,
            ..tiny_cfg(4, 3)
        };
        let model = train_recommender(&s.dataset, &split, &cfg, RecKind::Mf).unwrap();
        let pairs: Vec<(u32, u32)> = split
            .train
            .iter()
            .map(|&ix| {
                let it = s.dataset.interactions()[ix];
                (it.user, it.item)
            })
            .collect();
        let fresh = RecommenderModel::init(
            RecKind::Mf,
            model.user_ids.clone(),
            model.item_ids.clone(),
            cfg,
            &pairs,
        )
        .unwrap();
        assert_eq!(model.params_flat(), fresh.params_flat());
    }

    #[test]
    fn training_is_deterministic() {
        let (s, split) = planted(5);
        let cfg = TrainConfig {
            max_epochs: 6,
            ..tiny_cfg(4, 9)
        };
        let a = train_recommender(&s.dataset, &split, &cfg, RecKind::LightGcn).unwrap();
        let b = train_recommender(&s.dataset, &split, &cfg, RecKind::LightGcn).unwrap();
        assert_eq!(a.params_flat(), b.params_flat());
    }

    #[test]
    fn epoch_loss_mostly_decreases_early() {
        let (s, split) = planted(7);
        let cfg = TrainConfig {
            learning_rate: 0.01,
            max_epochs: 10,
            ..tiny_cfg(8, 7)
        };
        let model = train_recommender(&s.dataset, &split, &cfg, RecKind::Mf).unwrap();
        let losses = &model.log.epoch_losses;
        assert_eq!(losses.len(), 10);
        let violations = losses.windows(2).filter(|w| w[1] > w[0]).count();
        assert!(violations <= 2, "losses {losses:?}");
    }

    #[test]
    fn planted_top1_is_in_cluster_for_every_user() {
        let (s, split) = planted(11);
        let cfg = TrainConfig {
            max_epochs: 60,
            ..tiny_cfg(8, 11)
        };
        let model = train_recommender(&s.dataset, &split, &cfg, RecKind::Mf).unwrap();
        let hist = s.dataset.user_items_from(&split.train);
        for u in 0..s.dataset.n_users() {
            let top = model.recommend_topk(u as u32, 1, &hist[u]).unwrap()[0];
            assert_eq!(
                s.item_cluster[top as usize], s.user_cluster[u],
                "user {u} got an out-of-cluster top-1"
            );
        }
    }

    #[test]
    fn planted_validation_hitrate_reaches_0_6() {
        let spec = SyntheticSpec {
            n_users: 300,
            n_items: 200,
            n_clusters: 2,
            attribute_name: "cluster".into(),
            cluster_affinity: 1.0,
            interactions_per_user: 60,
        };
        let s = generate_synthetic(&spec, 13).unwrap();
        let split = split_dataset(&s.dataset, (0.8, 0.1, 0.1), 13).unwrap();
        let cfg = TrainConfig {
            dim: 16,
            learning_rate: 0.05,
            batch_size: 512,
            max_epochs: 40,
            eval_every: 5,
            patience: 4,
            seed: 13,
            ..TrainConfig::default()
        };
        let model = train_recommender(&s.dataset, &split, &cfg, RecKind::Mf).unwrap();
        let hr = model.log.best_val_hitrate.expect("validation ran");
        assert!(hr >= 0.6, "validation hit-rate@10 = {hr}");
    }

    #[test]
    fn divergence_is_reported() {
        let (s, split) = planted(2);
        let cfg = TrainConfig {
            learning_rate: 1e155,
            max_epochs: 5,
            ..tiny_cfg(4, 2)
        };
        let err = train_recommender(&s.dataset, &split, &cfg, RecKind::Mf).unwrap_err();
        assert!(err.to_string().contains("diverged"), "{err}");
    }

    #[test]
    fn checkpoint_round_trips_scores() {
        let (s, split) = planted(4);
        for kind in RecKind::all() {
            let cfg = TrainConfig {
                max_epochs: 4,
                dim: 4,
                ..tiny_cfg(4, 21)
            };
            let model = train_recommender(&s.dataset, &split, &cfg, kind).unwrap();
            let dir = tempfile::tempdir().unwrap();
            model.save(dir.path()).unwrap();
            let loaded = RecommenderModel::load(dir.path()).unwrap();
            assert_eq!(loaded.params_flat(), model.params_flat());
            for u in [0u32, 3, 7] {
                for i in [0u32, 5, 11] {
                    assert_abs_diff_eq!(
                        loaded.score(u, i).unwrap(),
                        model.score(u, i).unwrap(),
                        epsilon = 1e-12
                    );
                }
            }
            let a = model.recommend_topk(2, 10, &[]).unwrap();
            let b = loaded.recommend_topk(2, 10, &[]).unwrap();
            assert_eq!(a, b);
        }
    }
}
