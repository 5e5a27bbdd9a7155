//! Attribute classifiers: multi-hot and embedding-aggregation features, the
//! decision-tree / k-NN / MLP baselines, and the adaptive-weight model that
//! learns per-item aggregation weights jointly with its MLP head.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::augment::UnifiedEmbedding;
use crate::data::floor_frac;
use crate::error::{Error, Result};
use crate::ingest::{load_embedding_table, write_embedding_table, EmbeddingTable};
use crate::math::{axpy, dot, softmax, Mat};
use crate::seed::SeedPolicy;

/// Binary indicator vector over the item universe: 1 at every listed index.
pub fn featurize_multi_hot(list: &[u32], n_items: usize) -> Result<Vec<f64>> {
    let mut v = vec![0.0; n_items];
    for &item in list {
        let slot = v
            .get_mut(item as usize)
            .ok_or_else(|| Error::invalid(format!("item {item} out of range 0..{n_items}")))?;
        *slot = 1.0;
    }
    Ok(v)
}

/// How list-item embeddings are pooled into one user vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AggregationMode {
    /// Plain mean of the item embeddings.
    Sum,
    /// Position-decayed weights (K-j+1)/K², heavier near the top of the list.
    Static,
    /// Learned softmax weights over item embeddings.
    Dynamic,
}

impl AggregationMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AggregationMode::Sum => "sum",
            AggregationMode::Static => "static",
            AggregationMode::Dynamic => "dynamic",
        }
    }
}

impl std::fmt::Display for AggregationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for AggregationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sum" => Ok(AggregationMode::Sum),
            "static" => Ok(AggregationMode::Static),
            "dynamic" => Ok(AggregationMode::Dynamic),
            other => Err(Error::invalid(format!("unknown aggregation mode `{other}`"))),
        }
    }
}

/// Closed-form per-position weights; `None` for the learned mode.
fn mode_weights(mode: AggregationMode, k: usize) -> Option<Vec<f64>> {
    let kf = k as f64;
    match mode {
        AggregationMode::Sum => Some(vec![1.0 / kf; k]),
        AggregationMode::Static => {
            Some((1..=k).map(|j| (kf - j as f64 + 1.0) / (kf * kf)).collect())
        }
        AggregationMode::Dynamic => None,
    }
}

/// Softmax weights over list positions from the learned scoring vector:
/// w_j ∝ exp(w_a·e_j + b_a). Positive and summing to one by construction.
pub fn compute_weights(
    list: &[u32],
    e: &UnifiedEmbedding,
    w_a: &[f64],
    b_a: f64,
) -> Result<Vec<f64>> {
    if list.is_empty() {
        return Err(Error::invalid("recommendation list is empty"));
    }
    if w_a.len() != e.dim() {
        return Err(Error::invalid(format!(
            "weight vector dim {} does not match embedding dim {}",
            w_a.len(),
            e.dim()
        )));
    }
    let logits = list
        .iter()
        .map(|&item| Ok(dot(w_a, e.get(item)?) + b_a))
        .collect::<Result<Vec<f64>>>()?;
    Ok(softmax(&logits))
}

/// Single accumulation path shared by every aggregation mode, so equal
/// weight vectors always produce bit-identical user vectors.
fn weighted_sum(list: &[u32], e: &UnifiedEmbedding, weights: &[f64]) -> Result<Vec<f64>> {
    let mut u = vec![0.0; e.dim()];
    for (&item, &w) in list.iter().zip(weights) {
        axpy(w, e.get(item)?, &mut u);
    }
    Ok(u)
}

/// Pools a recommendation list into one user vector. `Dynamic` needs the
/// learned `(w_a, b_a)` pair; the other modes ignore it.
pub fn aggregate(
    list: &[u32],
    e: &UnifiedEmbedding,
    mode: AggregationMode,
    adaptive: Option<(&[f64], f64)>,
) -> Result<Vec<f64>> {
    if list.is_empty() {
        return Err(Error::invalid("recommendation list is empty"));
    }
    let weights = match mode_weights(mode, list.len()) {
        Some(w) => w,
        None => {
            let (w_a, b_a) = adaptive.ok_or_else(|| {
                Error::invalid("dynamic aggregation needs learned weight parameters")
            })?;
            compute_weights(list, e, w_a, b_a)?
        }
    };
    weighted_sum(list, e, &weights)
}

/// Precision/recall/F1 for one class of the declared label set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Number of truth examples carrying this class.
    pub support: usize,
}

/// Accuracy plus macro-averaged F1 over the declared label set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
}

/// Compares predictions against truth. Macro-F1 averages over all
/// `n_classes` declared classes; a class never predicted and never present
/// contributes an F1 of zero rather than being skipped.
pub fn evaluate_predictions(
    predicted: &[u32],
    truth: &[u32],
    n_classes: usize,
) -> Result<EvalMetrics> {
    if predicted.len() != truth.len() {
        return Err(Error::invalid(format!(
            "{} predictions against {} truth labels",
            predicted.len(),
            truth.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::invalid("no predictions to evaluate"));
    }
    if n_classes == 0 {
        return Err(Error::invalid("declared label set is empty"));
    }
    for &code in predicted.iter().chain(truth) {
        if code as usize >= n_classes {
            return Err(Error::invalid(format!(
                "label code {code} outside declared set of {n_classes}"
            )));
        }
    }
    let mut tp = vec![0usize; n_classes];
    let mut fp = vec![0usize; n_classes];
    let mut fn_ = vec![0usize; n_classes];
    let mut hits = 0usize;
    for (&p, &t) in predicted.iter().zip(truth) {
        if p == t {
            hits += 1;
            tp[p as usize] += 1;
        } else {
            fp[p as usize] += 1;
            fn_[t as usize] += 1;
        }
    }
    let per_class: Vec<ClassMetrics> = (0..n_classes)
        .map(|c| {
            let (tp, fp, fn_) = (tp[c] as f64, fp[c] as f64, fn_[c] as f64);
            let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
            let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassMetrics {
                precision,
                recall,
                f1,
                support: (tp + fn_) as usize,
            }
        })
        .collect();
    let macro_f1 = per_class.iter().map(|c| c.f1).sum::<f64>() / n_classes as f64;
    Ok(EvalMetrics {
        accuracy: hits as f64 / predicted.len() as f64,
        macro_f1,
        per_class,
    })
}

/// Baseline classifier families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClassifierKind {
    Tree,
    Knn,
    Mlp,
}

impl ClassifierKind {
    pub fn all() -> [ClassifierKind; 3] {
        [ClassifierKind::Tree, ClassifierKind::Knn, ClassifierKind::Mlp]
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ClassifierKind::Tree => "dt",
            ClassifierKind::Knn => "knn",
            ClassifierKind::Mlp => "mlp",
        }
    }
}

impl std::fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ClassifierKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dt" | "tree" => Ok(ClassifierKind::Tree),
            "knn" => Ok(ClassifierKind::Knn),
            "mlp" => Ok(ClassifierKind::Mlp),
            other => Err(Error::invalid(format!("unknown classifier kind `{other}`"))),
        }
    }
}

/// Shared knobs for the classifier families. Tree and k-NN use only their
/// own fields; the gradient-trained models use the rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    /// Decision-tree depth cap; 0 forces a single majority leaf.
    pub max_depth: usize,
    /// Neighbour count for k-NN voting.
    pub knn_k: usize,
    /// Hidden width of the plain MLP (the adaptive head always uses twice
    /// the embedding dim).
    pub hidden: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Evaluations without improvement before stopping.
    pub patience: usize,
    /// Validation cadence in epochs.
    pub eval_every: usize,
    /// Fraction of training examples held out for early stopping; a split
    /// too small to populate disables early stopping.
    pub val_frac: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            max_depth: 12,
            knn_k: 15,
            hidden: 256,
            learning_rate: 0.01,
            batch_size: 32,
            max_epochs: 200,
            patience: 10,
            eval_every: 5,
            val_frac: 0.1,
            seed: 0,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.knn_k == 0 {
            return Err(Error::invalid("knn_k must be positive"));
        }
        if self.hidden == 0 {
            return Err(Error::invalid("hidden width must be positive"));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::invalid("learning_rate must be finite and >= 0"));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.eval_every == 0 {
            return Err(Error::invalid(
                "batch_size, max_epochs and eval_every must be positive",
            ));
        }
        if self.patience == 0 {
            return Err(Error::invalid("patience must be positive"));
        }
        if !(0.0..1.0).contains(&self.val_frac) {
            return Err(Error::invalid("val_frac must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Checks one (features, labels) training set and returns the feature dim.
fn check_training_set(features: &[Vec<f64>], labels: &[u32], n_classes: usize) -> Result<usize> {
    if features.is_empty() {
        return Err(Error::invalid("no training examples"));
    }
    if features.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} feature rows against {} labels",
            features.len(),
            labels.len()
        )));
    }
    let dim = features[0].len();
    if dim == 0 {
        return Err(Error::invalid("feature vectors are empty"));
    }
    for (i, row) in features.iter().enumerate() {
        if row.len() != dim {
            return Err(Error::invalid(format!(
                "feature row {i} has dim {}, expected {dim}",
                row.len()
            )));
        }
        if !row.iter().all(|x| x.is_finite()) {
            return Err(Error::invalid(format!("feature row {i} is not finite")));
        }
    }
    check_labels(labels, n_classes)?;
    Ok(dim)
}

fn check_labels(labels: &[u32], n_classes: usize) -> Result<()> {
    let mut seen = vec![false; n_classes];
    for &y in labels {
        *seen
            .get_mut(y as usize)
            .ok_or_else(|| Error::invalid(format!("label code {y} outside declared set")))? = true;
    }
    if seen.iter().filter(|&&s| s).count() < 2 {
        return Err(Error::invalid("training labels contain a single class"));
    }
    Ok(())
}

/// Largest-probability index; ties resolve to the smallest class id.
fn argmax_label(p: &[f64]) -> u32 {
    let mut best = 0usize;
    for i in 1..p.len() {
        if p[i] > p[best] {
            best = i;
        }
    }
    best as u32
}

/// One shuffled holdout split shared by every gradient-trained classifier,
/// so models trained under the same seed see identical splits.
fn holdout_indices(n: usize, frac: f64, policy: &SeedPolicy) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut policy.rng("cla.split"));
    let n_val = floor_frac(frac, n);
    let mut val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

// ---------------------------------------------------------------------------
// Decision tree
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum TreeNode {
    Leaf {
        label: u32,
        /// Share of training examples at this leaf carrying `label`.
        confidence: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// Binary CART tree grown on Gini impurity with axis-aligned midpoint
/// thresholds. Nodes live in one arena with the root at index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    nodes: Vec<TreeNode>,
    n_classes: usize,
}

fn gini(counts: &[usize], total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    1.0 - counts
        .iter()
        .map(|&c| {
            let p = c as f64 / t;
            p * p
        })
        .sum::<f64>()
}

impl DecisionTree {
    pub fn train(
        features: &[Vec<f64>],
        labels: &[u32],
        n_classes: usize,
        cfg: &ClassifierConfig,
    ) -> Result<DecisionTree> {
        check_training_set(features, labels, n_classes)?;
        let mut tree = DecisionTree {
            nodes: Vec::new(),
            n_classes,
        };
        let idx: Vec<usize> = (0..features.len()).collect();
        tree.grow(features, labels, idx, cfg.max_depth);
        Ok(tree)
    }

    /// Recursively grows the subtree for `idx`, returning its arena index.
    fn grow(
        &mut self,
        features: &[Vec<f64>],
        labels: &[u32],
        idx: Vec<usize>,
        depth_left: usize,
    ) -> usize {
        let mut counts = vec![0usize; self.n_classes];
        for &i in &idx {
            counts[labels[i] as usize] += 1;
        }
        let node_gini = gini(&counts, idx.len());
        let make_leaf = |nodes: &mut Vec<TreeNode>| {
            // First index holding the maximum count, so vote ties go to the
            // smallest class id.
            let best = counts.iter().copied().max().unwrap_or(0);
            let label = counts.iter().position(|&c| c == best).unwrap_or(0) as u32;
            let node = nodes.len();
            nodes.push(TreeNode::Leaf {
                label,
                confidence: best as f64 / idx.len().max(1) as f64,
            });
            node
        };
        if depth_left == 0 || node_gini == 0.0 || idx.len() < 2 {
            return make_leaf(&mut self.nodes);
        }

        // Best axis-aligned split: scan every feature's sorted values and
        // every midpoint between distinct neighbours; strict improvement on
        // weighted impurity keeps the first (smallest feature, smallest
        // threshold) of any tied optima.
        let dim = features[idx[0]].len();
        let n = idx.len() as f64;
        let mut best: Option<(f64, usize, f64)> = None;
        let mut sorted: Vec<(f64, u32)> = Vec::with_capacity(idx.len());
        for f in 0..dim {
            sorted.clear();
            sorted.extend(idx.iter().map(|&i| (features[i][f], labels[i])));
            sorted.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            let mut left = vec![0usize; self.n_classes];
            let mut right = counts.clone();
            for i in 1..sorted.len() {
                let (prev_v, prev_y) = sorted[i - 1];
                left[prev_y as usize] += 1;
                right[prev_y as usize] -= 1;
                let v = sorted[i].0;
                if v <= prev_v {
                    continue;
                }
                let weighted = (i as f64 * gini(&left, i)
                    + (sorted.len() - i) as f64 * gini(&right, sorted.len() - i))
                    / n;
                if best.as_ref().is_none_or(|&(b, _, _)| weighted < b) {
                    best = Some((weighted, f, (prev_v + v) / 2.0));
                }
            }
        }
        let Some((weighted, feature, threshold)) = best else {
            return make_leaf(&mut self.nodes);
        };
        if node_gini - weighted <= 1e-12 {
            return make_leaf(&mut self.nodes);
        }
        let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = idx
            .into_iter()
            .partition(|&i| features[i][feature] <= threshold);
        let node = self.nodes.len();
        self.nodes.push(TreeNode::Leaf {
            label: 0,
            confidence: 0.0,
        });
        let left = self.grow(features, labels, left_idx, depth_left - 1);
        let right = self.grow(features, labels, right_idx, depth_left - 1);
        self.nodes[node] = TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        };
        node
    }

    pub fn predict(&self, x: &[f64]) -> Result<(u32, f64)> {
        let mut node = 0usize;
        loop {
            match &self.nodes[node] {
                TreeNode::Leaf { label, confidence } => return Ok((*label, *confidence)),
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    let v = *x.get(*feature).ok_or_else(|| {
                        Error::invalid(format!("feature vector too short for split {feature}"))
                    })?;
                    node = if v <= *threshold { *left } else { *right };
                }
            }
        }
    }

    /// Longest root-to-leaf path counted in splits.
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], n: usize) -> usize {
            match &nodes[n] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => {
                    1 + walk(nodes, *left).max(walk(nodes, *right))
                }
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }
}

// ---------------------------------------------------------------------------
// k-nearest neighbours
// ---------------------------------------------------------------------------

/// Brute-force k-NN over the stored training set with Euclidean distance.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnModel {
    k: usize,
    features: Vec<Vec<f64>>,
    labels: Vec<u32>,
    n_classes: usize,
}

impl KnnModel {
    pub fn train(
        features: &[Vec<f64>],
        labels: &[u32],
        n_classes: usize,
        cfg: &ClassifierConfig,
    ) -> Result<KnnModel> {
        cfg.validate()?;
        check_training_set(features, labels, n_classes)?;
        Ok(KnnModel {
            k: cfg.knn_k,
            features: features.to_vec(),
            labels: labels.to_vec(),
            n_classes,
        })
    }

    /// The k nearest training rows as (index, distance), ordered by distance
    /// then index so ties break deterministically.
    pub fn nearest(&self, x: &[f64]) -> Result<Vec<(usize, f64)>> {
        if x.len() != self.features[0].len() {
            return Err(Error::invalid(format!(
                "query dim {} does not match training dim {}",
                x.len(),
                self.features[0].len()
            )));
        }
        let mut dist: Vec<(usize, f64)> = self
            .features
            .iter()
            .enumerate()
            .map(|(i, row)| (i, crate::math::euclidean(x, row)))
            .collect();
        dist.sort_unstable_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        dist.truncate(self.k.min(self.features.len()));
        Ok(dist)
    }

    /// Majority vote over the nearest neighbours; vote ties go to the
    /// smallest class id. Confidence is the winning vote share.
    pub fn predict(&self, x: &[f64]) -> Result<(u32, f64)> {
        let neighbours = self.nearest(x)?;
        let mut votes = vec![0usize; self.n_classes];
        for &(i, _) in &neighbours {
            votes[self.labels[i] as usize] += 1;
        }
        let best = votes.iter().copied().max().unwrap_or(0);
        let label = votes.iter().position(|&v| v == best).unwrap_or(0) as u32;
        Ok((label, best as f64 / neighbours.len().max(1) as f64))
    }

    pub fn k(&self) -> usize {
        self.k
    }
}

// ---------------------------------------------------------------------------
// MLP
// ---------------------------------------------------------------------------

/// One-hidden-layer tanh network with a softmax output, used directly as a
/// feature classifier and as the head of the adaptive model.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpNet {
    w1: Mat,
    b1: Vec<f64>,
    w2: Mat,
    b2: Vec<f64>,
}

/// Accumulated parameter gradients for one batch.
#[derive(Debug, Clone)]
struct MlpGrad {
    w1: Mat,
    b1: Vec<f64>,
    w2: Mat,
    b2: Vec<f64>,
}

impl MlpGrad {
    fn zeros(net: &MlpNet) -> MlpGrad {
        MlpGrad {
            w1: Mat::zeros(net.w1.rows(), net.w1.cols()),
            b1: vec![0.0; net.b1.len()],
            w2: Mat::zeros(net.w2.rows(), net.w2.cols()),
            b2: vec![0.0; net.b2.len()],
        }
    }

    fn scale(&mut self, a: f64) {
        crate::math::scale(self.w1.data_mut(), a);
        crate::math::scale(&mut self.b1, a);
        crate::math::scale(self.w2.data_mut(), a);
        crate::math::scale(&mut self.b2, a);
    }
}

impl MlpNet {
    /// Gaussian(0, 0.1) weights drawn from the `cla.init.*` streams; biases
    /// start at zero and consume no randomness.
    fn init(in_dim: usize, hidden: usize, classes: usize, policy: &SeedPolicy) -> MlpNet {
        let normal = Normal::new(0.0, 0.1).expect("valid std");
        let draw = |stage: &str, rows: usize, cols: usize| {
            let mut rng = policy.rng(stage);
            Mat::from_fn(rows, cols, |_, _| normal.sample(&mut rng))
        };
        MlpNet {
            w1: draw("cla.init.w1", hidden, in_dim),
            b1: vec![0.0; hidden],
            w2: draw("cla.init.w2", classes, hidden),
            b2: vec![0.0; classes],
        }
    }

    fn in_dim(&self) -> usize {
        self.w1.cols()
    }

    fn hidden(&self) -> usize {
        self.w1.rows()
    }

    /// Forward pass returning (hidden activations, class probabilities).
    fn forward(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut h = self.w1.mul_vec(x);
        for (v, b) in h.iter_mut().zip(&self.b1) {
            *v = (*v + b).tanh();
        }
        let mut logits = self.w2.mul_vec(&h);
        for (v, b) in logits.iter_mut().zip(&self.b2) {
            *v += b;
        }
        let p = softmax(&logits);
        (h, p)
    }

    /// Adds this sample's cross-entropy gradient into `g` and returns the
    /// loss together with the gradient w.r.t. the input.
    fn backprop(&self, x: &[f64], y: u32, g: &mut MlpGrad) -> (f64, Vec<f64>) {
        let (h, p) = self.forward(x);
        let loss = -p[y as usize].ln();
        let mut dl = p;
        dl[y as usize] -= 1.0;
        for (c, &d) in dl.iter().enumerate() {
            axpy(d, &h, g.w2.row_mut(c));
            g.b2[c] += d;
        }
        let mut dh = self.w2.mul_vec_t(&dl);
        for (v, hv) in dh.iter_mut().zip(&h) {
            *v *= 1.0 - hv * hv;
        }
        for (r, &d) in dh.iter().enumerate() {
            axpy(d, x, g.w1.row_mut(r));
            g.b1[r] += d;
        }
        (loss, self.w1.mul_vec_t(&dh))
    }

    /// Gradient step `params += step · g`.
    fn apply(&mut self, step: f64, g: &MlpGrad) {
        axpy(step, g.w1.data(), self.w1.data_mut());
        axpy(step, &g.b1, &mut self.b1);
        axpy(step, g.w2.data(), self.w2.data_mut());
        axpy(step, &g.b2, &mut self.b2);
    }

    fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend_from_slice(self.w1.data());
        out.extend_from_slice(&self.b1);
        out.extend_from_slice(self.w2.data());
        out.extend_from_slice(&self.b2);
        out
    }

    fn set_params_flat(&mut self, flat: &[f64]) {
        let mut at = 0usize;
        let mut take = |dst: &mut [f64]| {
            dst.copy_from_slice(&flat[at..at + dst.len()]);
            at += dst.len();
        };
        take(self.w1.data_mut());
        take(&mut self.b1);
        take(self.w2.data_mut());
        take(&mut self.b2);
        debug_assert_eq!(at, flat.len());
    }

    fn n_params(&self) -> usize {
        self.w1.data().len() + self.b1.len() + self.w2.data().len() + self.b2.len()
    }
}

/// Mean cross-entropy and mean gradients over one batch.
fn mlp_batch_loss_and_grad(net: &MlpNet, xs: &[&[f64]], ys: &[u32]) -> (f64, MlpGrad) {
    let mut g = MlpGrad::zeros(net);
    let mut loss = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        loss += net.backprop(x, y, &mut g).0;
    }
    let inv = 1.0 / xs.len().max(1) as f64;
    g.scale(inv);
    (loss * inv, g)
}

/// Feature-vector classifier around [`MlpNet`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpClassifier {
    net: MlpNet,
    n_classes: usize,
}

impl MlpClassifier {
    /// Minibatch SGD on cross-entropy with a held-out early-stopping split.
    /// The gradient is a batch mean and the step is scaled by the batch
    /// size, so each example contributes a full per-sample step.
    pub fn train(
        features: &[Vec<f64>],
        labels: &[u32],
        n_classes: usize,
        cfg: &ClassifierConfig,
    ) -> Result<MlpClassifier> {
        cfg.validate()?;
        let dim = check_training_set(features, labels, n_classes)?;
        let policy = SeedPolicy::new(cfg.seed);
        let (train_idx, val_idx) = holdout_indices(features.len(), cfg.val_frac, &policy);
        let mut net = MlpNet::init(dim, cfg.hidden, n_classes, &policy);

        let mut best: Option<(f64, Vec<f64>)> = None;
        let mut evals_since_best = 0usize;
        'epochs: for epoch in 0..cfg.max_epochs {
            let mut order = train_idx.clone();
            order.shuffle(&mut policy.rng_indexed("cla.shuffle", epoch as u64));
            for batch in order.chunks(cfg.batch_size) {
                let xs: Vec<&[f64]> = batch.iter().map(|&i| features[i].as_slice()).collect();
                let ys: Vec<u32> = batch.iter().map(|&i| labels[i]).collect();
                let (loss, g) = mlp_batch_loss_and_grad(&net, &xs, &ys);
                if !loss.is_finite() {
                    return Err(Error::Train(format!(
                        "training diverged: non-finite loss at epoch {epoch}"
                    )));
                }
                net.apply(-cfg.learning_rate * xs.len() as f64, &g);
            }
            if !val_idx.is_empty() && (epoch + 1) % cfg.eval_every == 0 {
                let mut hits = 0usize;
                for &i in &val_idx {
                    if argmax_label(&net.forward(&features[i]).1) == labels[i] {
                        hits += 1;
                    }
                }
                let acc = hits as f64 / val_idx.len() as f64;
                let improved = best.as_ref().is_none_or(|(b, _)| acc > *b);
                if improved {
                    best = Some((acc, net.params_flat()));
                    evals_since_best = 0;
                } else {
                    evals_since_best += 1;
                    if evals_since_best >= cfg.patience {
                        break 'epochs;
                    }
                }
            }
        }
        if let Some((_, params)) = best {
            net.set_params_flat(&params);
        }
        Ok(MlpClassifier { net, n_classes })
    }

    /// Predicted class and full probability vector.
    pub fn predict(&self, x: &[f64]) -> Result<(u32, Vec<f64>)> {
        if x.len() != self.net.in_dim() {
            return Err(Error::invalid(format!(
                "input dim {} does not match model dim {}",
                x.len(),
                self.net.in_dim()
            )));
        }
        let (_, p) = self.net.forward(x);
        Ok((argmax_label(&p), p))
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }
}

// ---------------------------------------------------------------------------
// Adaptive-weight classifier
// ---------------------------------------------------------------------------

/// Classifier over recommendation lists: pools item embeddings with
/// mode-dependent weights, then scores the pooled vector with an MLP head.
/// In `Dynamic` mode the pooling weights are trained jointly with the head.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveClassifier {
    w_a: Vec<f64>,
    b_a: f64,
    head: MlpNet,
    mode: AggregationMode,
    n_classes: usize,
}

/// Gradients for one adaptive batch: the scoring vector plus the head.
struct AdaptiveGrad {
    w_a: Vec<f64>,
    head: MlpGrad,
}

impl AdaptiveClassifier {
    /// Jointly trains the weight parameters and the MLP head by minibatch
    /// SGD on cross-entropy. The head is two embedding-dims wide. `w_a`
    /// starts at zero — uniform weights, no randomness consumed — so a run
    /// with fixed weights consumes exactly the random streams of a plain
    /// MLP on mean-pooled features.
    pub fn train(
        lists: &[Vec<u32>],
        labels: &[u32],
        e: &UnifiedEmbedding,
        n_classes: usize,
        mode: AggregationMode,
        cfg: &ClassifierConfig,
    ) -> Result<AdaptiveClassifier> {
        cfg.validate()?;
        if lists.is_empty() {
            return Err(Error::invalid("no training examples"));
        }
        if lists.len() != labels.len() {
            return Err(Error::invalid(format!(
                "{} lists against {} labels",
                lists.len(),
                labels.len()
            )));
        }
        for (i, list) in lists.iter().enumerate() {
            if list.is_empty() {
                return Err(Error::invalid(format!("list {i} is empty")));
            }
            for &item in list {
                e.get(item)?;
            }
        }
        check_labels(labels, n_classes)?;

        let policy = SeedPolicy::new(cfg.seed);
        let (train_idx, val_idx) = holdout_indices(lists.len(), cfg.val_frac, &policy);
        let mut model = AdaptiveClassifier {
            w_a: vec![0.0; e.dim()],
            b_a: 0.0,
            head: MlpNet::init(e.dim(), 2 * e.dim(), n_classes, &policy),
            mode,
            n_classes,
        };

        let mut best: Option<(f64, Vec<f64>)> = None;
        let mut evals_since_best = 0usize;
        'epochs: for epoch in 0..cfg.max_epochs {
            let mut order = train_idx.clone();
            order.shuffle(&mut policy.rng_indexed("cla.shuffle", epoch as u64));
            for batch in order.chunks(cfg.batch_size) {
                let (loss, g) = model.batch_grad(batch, lists, labels, e)?;
                if !loss.is_finite() {
                    return Err(Error::Train(format!(
                        "training diverged: non-finite loss at epoch {epoch}"
                    )));
                }
                let step = -cfg.learning_rate * batch.len() as f64;
                model.head.apply(step, &g.head);
                if model.mode == AggregationMode::Dynamic {
                    axpy(step, &g.w_a, &mut model.w_a);
                }
            }
            if !val_idx.is_empty() && (epoch + 1) % cfg.eval_every == 0 {
                let mut hits = 0usize;
                for &i in &val_idx {
                    if model.predict(&lists[i], e)?.0 == labels[i] {
                        hits += 1;
                    }
                }
                let acc = hits as f64 / val_idx.len() as f64;
                let improved = best.as_ref().is_none_or(|(b, _)| acc > *b);
                if improved {
                    best = Some((acc, model.params_flat()));
                    evals_since_best = 0;
                } else {
                    evals_since_best += 1;
                    if evals_since_best >= cfg.patience {
                        break 'epochs;
                    }
                }
            }
        }
        if let Some((_, params)) = best {
            model.set_params_flat(&params)?;
        }
        Ok(model)
    }

    /// Weights for one list under this model's aggregation mode.
    fn list_weights(&self, list: &[u32], e: &UnifiedEmbedding) -> Result<Vec<f64>> {
        match mode_weights(self.mode, list.len()) {
            Some(w) => Ok(w),
            None => compute_weights(list, e, &self.w_a, self.b_a),
        }
    }

    /// Mean loss and gradients over the batch indices. The weight softmax is
    /// shift-invariant, so `b_a` provably receives a zero gradient and keeps
    /// its initial value; it stays a parameter for interface completeness.
    fn batch_grad(
        &self,
        batch: &[usize],
        lists: &[Vec<u32>],
        labels: &[u32],
        e: &UnifiedEmbedding,
    ) -> Result<(f64, AdaptiveGrad)> {
        let mut g = AdaptiveGrad {
            w_a: vec![0.0; self.w_a.len()],
            head: MlpGrad::zeros(&self.head),
        };
        let mut loss = 0.0;
        for &i in batch {
            let list = &lists[i];
            let weights = self.list_weights(list, e)?;
            let u = weighted_sum(list, e, &weights)?;
            let (l, du) = self.head.backprop(&u, labels[i], &mut g.head);
            loss += l;
            if self.mode == AggregationMode::Dynamic {
                // Pull the input gradient back through u = Σ w_j e_j and the
                // softmax: ∂L/∂logit_j = w_j (du·e_j − Σ_k w_k du·e_k).
                let dw: Vec<f64> = list
                    .iter()
                    .map(|&item| Ok(dot(&du, e.get(item)?)))
                    .collect::<Result<Vec<f64>>>()?;
                let mean: f64 = weights.iter().zip(&dw).map(|(w, d)| w * d).sum();
                for ((&item, &w), &d) in list.iter().zip(&weights).zip(&dw) {
                    axpy(w * (d - mean), e.get(item)?, &mut g.w_a);
                }
            }
        }
        let inv = 1.0 / batch.len().max(1) as f64;
        g.head.scale(inv);
        crate::math::scale(&mut g.w_a, inv);
        Ok((loss * inv, g))
    }

    /// Predicted class and probability vector for one list.
    pub fn predict(&self, list: &[u32], e: &UnifiedEmbedding) -> Result<(u32, Vec<f64>)> {
        if list.is_empty() {
            return Err(Error::invalid("recommendation list is empty"));
        }
        let weights = self.list_weights(list, e)?;
        let u = weighted_sum(list, e, &weights)?;
        let (_, p) = self.head.forward(&u);
        Ok((argmax_label(&p), p))
    }

    /// Mean cross-entropy over (list, label) pairs under current parameters.
    pub fn batch_loss(
        &self,
        lists: &[Vec<u32>],
        labels: &[u32],
        e: &UnifiedEmbedding,
    ) -> Result<f64> {
        if lists.len() != labels.len() || lists.is_empty() {
            return Err(Error::invalid("lists and labels must align and be nonempty"));
        }
        let mut loss = 0.0;
        for (list, &y) in lists.iter().zip(labels) {
            let weights = self.list_weights(list, e)?;
            let u = weighted_sum(list, e, &weights)?;
            let (_, p) = self.head.forward(&u);
            loss += -p[y as usize].ln();
        }
        Ok(loss / lists.len() as f64)
    }

    /// Mean loss plus the full flattened gradient in [`params_flat`] order,
    /// for gradient verification.
    pub fn batch_loss_and_grad(
        &self,
        lists: &[Vec<u32>],
        labels: &[u32],
        e: &UnifiedEmbedding,
    ) -> Result<(f64, Vec<f64>)> {
        if lists.len() != labels.len() || lists.is_empty() {
            return Err(Error::invalid("lists and labels must align and be nonempty"));
        }
        let batch: Vec<usize> = (0..lists.len()).collect();
        let (loss, g) = self.batch_grad(&batch, lists, labels, e)?;
        let mut flat = Vec::with_capacity(self.w_a.len() + 1 + self.head.n_params());
        flat.extend_from_slice(&g.w_a);
        flat.push(0.0);
        flat.extend_from_slice(&g.head.w1.data());
        flat.extend_from_slice(&g.head.b1);
        flat.extend_from_slice(&g.head.w2.data());
        flat.extend_from_slice(&g.head.b2);
        Ok((loss, flat))
    }

    /// Every trainable value in a fixed order: w_a, b_a, then the head.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.w_a.len() + 1 + self.head.n_params());
        out.extend_from_slice(&self.w_a);
        out.push(self.b_a);
        out.extend(self.head.params_flat());
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        let expect = self.w_a.len() + 1 + self.head.n_params();
        if flat.len() != expect {
            return Err(Error::invalid(format!(
                "parameter vector has {} entries, expected {expect}",
                flat.len()
            )));
        }
        let l = self.w_a.len();
        self.w_a.copy_from_slice(&flat[..l]);
        self.b_a = flat[l];
        self.head.set_params_flat(&flat[l + 1..]);
        Ok(())
    }

    pub fn mode(&self) -> AggregationMode {
        self.mode
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn dim(&self) -> usize {
        self.w_a.len()
    }

    /// The learned scoring parameters (w_a, b_a).
    pub fn weight_params(&self) -> (&[f64], f64) {
        (&self.w_a, self.b_a)
    }

    /// Writes the checkpoint: a JSON manifest plus one embedding-table text
    /// file per parameter group.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = AdaptiveManifest {
            kind: "adaptive".into(),
            n_classes: self.n_classes,
            dim: self.dim(),
            hidden: self.head.hidden(),
            mode: self.mode.to_string(),
            b_a: self.b_a,
        };
        let path = dir.join("manifest.json");
        fs::write(
            &path,
            serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
        )
        .map_err(|e| Error::io(&path, e))?;
        let wa = EmbeddingTable::from_rows(self.w_a.len(), vec![("wa".into(), self.w_a.clone())])
            .expect("consistent rows");
        write_embedding_table(&dir.join("adaptive_wa.txt"), &wa)?;
        save_net(dir, &self.head)
    }

    /// Loads a checkpoint written by [`save`].
    pub fn load(dir: &Path) -> Result<AdaptiveClassifier> {
        let manifest: AdaptiveManifest = read_manifest(dir)?;
        if manifest.kind != "adaptive" {
            return Err(Error::invalid(format!(
                "checkpoint kind `{}` is not an adaptive classifier",
                manifest.kind
            )));
        }
        let wa_table = load_embedding_table(&dir.join("adaptive_wa.txt"))?;
        let w_a = wa_table
            .get("wa")
            .ok_or_else(|| Error::missing("checkpoint row", "wa"))?
            .to_vec();
        let head = load_net(dir, manifest.dim, manifest.hidden, manifest.n_classes)?;
        Ok(AdaptiveClassifier {
            w_a,
            b_a: manifest.b_a,
            head,
            mode: manifest.mode.parse()?,
            n_classes: manifest.n_classes,
        })
    }
}

// ---------------------------------------------------------------------------
// Unified classifier facade and checkpoints
// ---------------------------------------------------------------------------

/// Any trained feature-vector classifier.
#[derive(Debug, Clone, PartialEq)]
pub enum Classifier {
    Tree(DecisionTree),
    Knn(KnnModel),
    Mlp(MlpClassifier),
}

/// Trains the requested baseline on (features, labels).
pub fn train_classifier(
    features: &[Vec<f64>],
    labels: &[u32],
    n_classes: usize,
    kind: ClassifierKind,
    cfg: &ClassifierConfig,
) -> Result<Classifier> {
    Ok(match kind {
        ClassifierKind::Tree => Classifier::Tree(DecisionTree::train(features, labels, n_classes, cfg)?),
        ClassifierKind::Knn => Classifier::Knn(KnnModel::train(features, labels, n_classes, cfg)?),
        ClassifierKind::Mlp => Classifier::Mlp(MlpClassifier::train(features, labels, n_classes, cfg)?),
    })
}

impl Classifier {
    pub fn kind(&self) -> ClassifierKind {
        match self {
            Classifier::Tree(_) => ClassifierKind::Tree,
            Classifier::Knn(_) => ClassifierKind::Knn,
            Classifier::Mlp(_) => ClassifierKind::Mlp,
        }
    }

    /// Predicted class plus a confidence: leaf purity for the tree, vote
    /// share for k-NN, top softmax probability for the MLP.
    pub fn predict(&self, x: &[f64]) -> Result<(u32, f64)> {
        match self {
            Classifier::Tree(t) => t.predict(x),
            Classifier::Knn(k) => k.predict(x),
            Classifier::Mlp(m) => {
                let (label, p) = m.predict(x)?;
                Ok((label, p[label as usize]))
            }
        }
    }

    /// Writes the checkpoint: a JSON manifest plus text tables for any
    /// matrix-valued state.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = match self {
            Classifier::Tree(t) => ClassifierManifest {
                kind: "dt".into(),
                n_classes: t.n_classes,
                nodes: Some(t.nodes.clone()),
                k: None,
                labels: None,
                dim: None,
                hidden: None,
            },
            Classifier::Knn(k) => ClassifierManifest {
                kind: "knn".into(),
                n_classes: k.n_classes,
                nodes: None,
                k: Some(k.k),
                labels: Some(k.labels.clone()),
                dim: Some(k.features[0].len()),
                hidden: None,
            },
            Classifier::Mlp(m) => ClassifierManifest {
                kind: "mlp".into(),
                n_classes: m.n_classes,
                nodes: None,
                k: None,
                labels: None,
                dim: Some(m.net.in_dim()),
                hidden: Some(m.net.hidden()),
            },
        };
        let path = dir.join("manifest.json");
        fs::write(
            &path,
            serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
        )
        .map_err(|e| Error::io(&path, e))?;
        match self {
            Classifier::Tree(_) => Ok(()),
            Classifier::Knn(k) => {
                let rows = EmbeddingTable::from_rows(
                    k.features[0].len(),
                    k.features
                        .iter()
                        .enumerate()
                        .map(|(r, v)| (format!("r{r}"), v.clone()))
                        .collect(),
                )
                .expect("consistent rows");
                write_embedding_table(&dir.join("knn_features.txt"), &rows)
            }
            Classifier::Mlp(m) => save_net(dir, &m.net),
        }
    }

    /// Loads a checkpoint written by [`save`].
    pub fn load(dir: &Path) -> Result<Classifier> {
        let manifest: ClassifierManifest = read_manifest(dir)?;
        match manifest.kind.as_str() {
            "dt" => Ok(Classifier::Tree(DecisionTree {
                nodes: manifest
                    .nodes
                    .ok_or_else(|| Error::missing("checkpoint field", "nodes"))?,
                n_classes: manifest.n_classes,
            })),
            "knn" => {
                let labels = manifest
                    .labels
                    .ok_or_else(|| Error::missing("checkpoint field", "labels"))?;
                let table = load_embedding_table(&dir.join("knn_features.txt"))?;
                if table.len() != labels.len() {
                    return Err(Error::invalid(
                        "checkpoint feature count disagrees with the label count",
                    ));
                }
                let features = (0..table.len())
                    .map(|r| {
                        table
                            .get(&format!("r{r}"))
                            .map(|v| v.to_vec())
                            .ok_or_else(|| Error::missing("checkpoint row", format!("r{r}")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Classifier::Knn(KnnModel {
                    k: manifest
                        .k
                        .ok_or_else(|| Error::missing("checkpoint field", "k"))?,
                    features,
                    labels,
                    n_classes: manifest.n_classes,
                }))
            }
            "mlp" => {
                let dim = manifest
                    .dim
                    .ok_or_else(|| Error::missing("checkpoint field", "dim"))?;
                let hidden = manifest
                    .hidden
                    .ok_or_else(|| Error::missing("checkpoint field", "hidden"))?;
                Ok(Classifier::Mlp(MlpClassifier {
                    net: load_net(dir, dim, hidden, manifest.n_classes)?,
                    n_classes: manifest.n_classes,
                }))
            }
            other => Err(Error::invalid(format!("unknown checkpoint kind `{other}`"))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ClassifierManifest {
    kind: String,
    n_classes: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    nodes: Option<Vec<TreeNode>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<u32>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    hidden: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct AdaptiveManifest {
    kind: String,
    n_classes: usize,
    dim: usize,
    hidden: usize,
    mode: String,
    b_a: f64,
}

fn read_manifest<T: serde::de::DeserializeOwned>(dir: &Path) -> Result<T> {
    let path = dir.join("manifest.json");
    let raw = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&raw).map_err(|e| Error::parse(&path, 1, format!("bad manifest: {e}")))
}

fn save_net(dir: &Path, net: &MlpNet) -> Result<()> {
    let rows = |mat: &Mat, prefix: &str| {
        EmbeddingTable::from_rows(
            mat.cols(),
            (0..mat.rows())
                .map(|r| (format!("{prefix}{r}"), mat.row(r).to_vec()))
                .collect(),
        )
        .expect("consistent rows")
    };
    write_embedding_table(&dir.join("mlp_w1.txt"), &rows(&net.w1, "h"))?;
    write_embedding_table(&dir.join("mlp_w2.txt"), &rows(&net.w2, "c"))?;
    let b1 = EmbeddingTable::from_rows(net.b1.len(), vec![("b1".into(), net.b1.clone())])
        .expect("consistent rows");
    write_embedding_table(&dir.join("mlp_b1.txt"), &b1)?;
    let b2 = EmbeddingTable::from_rows(net.b2.len(), vec![("b2".into(), net.b2.clone())])
        .expect("consistent rows");
    write_embedding_table(&dir.join("mlp_b2.txt"), &b2)
}

fn load_net(dir: &Path, in_dim: usize, hidden: usize, classes: usize) -> Result<MlpNet> {
    let read_mat = |name: &str, prefix: &str, rows: usize, cols: usize| -> Result<Mat> {
        let t = load_embedding_table(&dir.join(name))?;
        if t.dim() != cols || t.len() != rows {
            return Err(Error::invalid(format!(
                "checkpoint table {name} is {}×{}, expected {rows}×{cols}",
                t.len(),
                t.dim()
            )));
        }
        let mut mat = Mat::zeros(rows, cols);
        for r in 0..rows {
            let row = t
                .get(&format!("{prefix}{r}"))
                .ok_or_else(|| Error::missing("checkpoint row", format!("{prefix}{r}")))?;
            mat.row_mut(r).copy_from_slice(row);
        }
        Ok(mat)
    };
    let read_vec = |name: &str, id: &str, len: usize| -> Result<Vec<f64>> {
        let t = load_embedding_table(&dir.join(name))?;
        let v = t
            .get(id)
            .ok_or_else(|| Error::missing("checkpoint row", id))?;
        if v.len() != len {
            return Err(Error::invalid(format!(
                "checkpoint vector {id} has len {}, expected {len}",
                v.len()
            )));
        }
        Ok(v.to_vec())
    };
    Ok(MlpNet {
        w1: read_mat("mlp_w1.txt", "h", hidden, in_dim)?,
        b1: read_vec("mlp_b1.txt", "b1", hidden)?,
        w2: read_mat("mlp_w2.txt", "c", classes, hidden)?,
        b2: read_vec("mlp_b2.txt", "b2", classes)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::Provenance;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn table(rows: Vec<Vec<f64>>) -> UnifiedEmbedding {
        UnifiedEmbedding::from_vectors(rows, Provenance::Surrogate).unwrap()
    }

    fn quick_cfg(seed: u64) -> ClassifierConfig {
        ClassifierConfig {
            hidden: 16,
            learning_rate: 0.05,
            batch_size: 16,
            max_epochs: 80,
            seed,
            ..ClassifierConfig::default()
        }
    }

    // -- features ----------------------------------------------------------

    #[test]
    fn multi_hot_marks_listed_items() {
        assert_eq!(
            featurize_multi_hot(&[0, 2], 4).unwrap(),
            vec![1.0, 0.0, 1.0, 0.0]
        );
    }

    #[test]
    fn multi_hot_of_empty_list_is_zero() {
        assert_eq!(featurize_multi_hot(&[], 3).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn multi_hot_sums_to_list_length() {
        let list: Vec<u32> = (0..17).map(|i| i * 2).collect();
        let v = featurize_multi_hot(&list, 50).unwrap();
        assert_abs_diff_eq!(v.iter().sum::<f64>(), 17.0);
    }

    #[test]
    fn multi_hot_rejects_out_of_range_items() {
        assert!(featurize_multi_hot(&[4], 4).is_err());
    }

    // -- weights -----------------------------------------------------------

    #[test]
    fn identical_embeddings_give_uniform_weights() {
        let e = table(vec![vec![0.3, -0.5]; 4]);
        let w = compute_weights(&[0, 1, 2, 3], &e, &[1.0, 2.0], 0.0).unwrap();
        assert_eq!(w, vec![0.25; 4]);
    }

    #[test]
    fn hand_softmax_two_items() {
        let e = table(vec![vec![(2.0f64).ln()], vec![0.0]]);
        let w = compute_weights(&[0, 1], &e, &[1.0], 0.0).unwrap();
        assert_abs_diff_eq!(w[0], 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(w[1], 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn bias_shift_leaves_weights_unchanged() {
        let e = table(vec![vec![0.4, 1.0], vec![-0.2, 0.3], vec![2.0, -1.0]]);
        let a = compute_weights(&[0, 1, 2], &e, &[0.7, -0.4], 0.0).unwrap();
        let b = compute_weights(&[0, 1, 2], &e, &[0.7, -0.4], 5.0).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn weights_permute_with_the_list() {
        let e = table(vec![vec![0.4], vec![-0.2], vec![2.0]]);
        let fwd = compute_weights(&[0, 1, 2], &e, &[1.0], 0.1).unwrap();
        let rev = compute_weights(&[2, 1, 0], &e, &[1.0], 0.1).unwrap();
        assert_eq!(fwd[0], rev[2]);
        assert_eq!(fwd[1], rev[1]);
        assert_eq!(fwd[2], rev[0]);
    }

    #[test]
    fn zero_parameters_reproduce_sum_weights_exactly() {
        let e = table(vec![vec![0.4, 2.0], vec![-0.2, 0.1], vec![2.0, -3.0]]);
        let dynamic = compute_weights(&[0, 1, 2], &e, &[0.0, 0.0], 0.0).unwrap();
        let fixed = mode_weights(AggregationMode::Sum, 3).unwrap();
        // Bit-for-bit equality is what makes the frozen model interchangeable
        // with mean pooling.
        assert_eq!(dynamic, fixed);
    }

    #[test]
    fn weights_reject_missing_embeddings_and_bad_dims() {
        let e = table(vec![vec![1.0, 0.0]]);
        assert!(compute_weights(&[5], &e, &[1.0, 0.0], 0.0).is_err());
        assert!(compute_weights(&[0], &e, &[1.0], 0.0).is_err());
        assert!(compute_weights(&[], &e, &[1.0, 0.0], 0.0).is_err());
    }

    proptest! {
        #[test]
        fn weights_are_positive_and_sum_to_one(
            vals in proptest::collection::vec(-3.0f64..3.0, 2..24),
            wa in -2.0f64..2.0,
            ba in -2.0f64..2.0,
        ) {
            let e = table(vals.iter().map(|&v| vec![v]).collect());
            let list: Vec<u32> = (0..vals.len() as u32).collect();
            let w = compute_weights(&list, &e, &[wa], ba).unwrap();
            prop_assert!(w.iter().all(|&x| x > 0.0));
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    // -- aggregation -------------------------------------------------------

    #[test]
    fn sum_is_the_embedding_mean() {
        let e = table(vec![vec![1.0, 1.0], vec![3.0, 3.0]]);
        let u = aggregate(&[0, 1], &e, AggregationMode::Sum, None).unwrap();
        assert_eq!(u, vec![2.0, 2.0]);
    }

    #[test]
    fn static_weights_hand_case() {
        let e = table(vec![vec![2.0, 0.0], vec![0.0, 4.0]]);
        let u = aggregate(&[0, 1], &e, AggregationMode::Static, None).unwrap();
        assert_eq!(u, vec![1.0, 1.0]);
    }

    #[test]
    fn dynamic_equals_sum_for_identical_embeddings() {
        let e = table(vec![vec![0.7, -0.1]; 5]);
        let list = [0u32, 1, 2, 3, 4];
        let sum = aggregate(&list, &e, AggregationMode::Sum, None).unwrap();
        let dynamic = aggregate(
            &list,
            &e,
            AggregationMode::Dynamic,
            Some((&[0.3, 0.9], 0.2)),
        )
        .unwrap();
        assert_eq!(sum, dynamic);
    }

    #[test]
    fn aggregate_rejects_empty_and_parameterless_dynamic() {
        let e = table(vec![vec![1.0]]);
        assert!(aggregate(&[], &e, AggregationMode::Sum, None).is_err());
        assert!(aggregate(&[0], &e, AggregationMode::Dynamic, None).is_err());
    }

    // -- metrics -----------------------------------------------------------

    #[test]
    fn perfect_predictions_score_one() {
        let m = evaluate_predictions(&[0, 1, 2, 1], &[0, 1, 2, 1], 3).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.macro_f1, 1.0);
    }

    #[test]
    fn constant_predictor_on_balanced_classes() {
        let m = evaluate_predictions(&[0, 0, 0, 0], &[0, 0, 1, 1], 2).unwrap();
        assert_abs_diff_eq!(m.accuracy, 0.5);
        // Constant class: precision 1/2, recall 1 → F1 2/3; the other class
        // never predicted → F1 0; macro mean 1/3.
        assert_abs_diff_eq!(m.macro_f1, 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.per_class[0].f1, 2.0 / 3.0, epsilon = 1e-12);
        assert_eq!(m.per_class[1].f1, 0.0);
    }

    #[test]
    fn absent_declared_class_contributes_zero_f1() {
        let m = evaluate_predictions(&[0, 1], &[0, 1], 3).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_abs_diff_eq!(m.macro_f1, 2.0 / 3.0, epsilon = 1e-12);
        assert_eq!(m.per_class[2].support, 0);
    }

    #[test]
    fn evaluation_rejects_mismatched_or_out_of_range_input() {
        assert!(evaluate_predictions(&[0], &[0, 1], 2).is_err());
        assert!(evaluate_predictions(&[], &[], 2).is_err());
        assert!(evaluate_predictions(&[2], &[0], 2).is_err());
    }

    // -- decision tree -----------------------------------------------------

    #[test]
    fn decisive_feature_yields_a_depth_one_tree() {
        let features: Vec<Vec<f64>> = (0..20)
            .map(|i| vec![if i < 10 { 0.0 } else { 1.0 }, (i % 7) as f64])
            .collect();
        let labels: Vec<u32> = (0..20).map(|i| u32::from(i >= 10)).collect();
        let tree =
            DecisionTree::train(&features, &labels, 2, &ClassifierConfig::default()).unwrap();
        assert_eq!(tree.depth(), 1);
        for (x, &y) in features.iter().zip(&labels) {
            let (label, confidence) = tree.predict(x).unwrap();
            assert_eq!(label, y);
            assert_eq!(confidence, 1.0);
        }
    }

    #[test]
    fn tree_uses_two_features_when_one_is_not_enough() {
        // f0 isolates class 2; inside f0=0 the second feature separates 0/1.
        let features = vec![
            vec![0.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 0.0],
            vec![1.0, 1.0],
        ];
        let labels = vec![0, 1, 2, 2];
        let tree =
            DecisionTree::train(&features, &labels, 3, &ClassifierConfig::default()).unwrap();
        assert_eq!(tree.depth(), 2);
        for (x, &y) in features.iter().zip(&labels) {
            assert_eq!(tree.predict(x).unwrap().0, y);
        }
    }

    #[test]
    fn depth_zero_tree_is_a_majority_leaf_with_smallest_class_tie() {
        let cfg = ClassifierConfig {
            max_depth: 0,
            ..ClassifierConfig::default()
        };
        let features = vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]];
        let labels = vec![1, 1, 0, 0];
        let tree = DecisionTree::train(&features, &labels, 2, &cfg).unwrap();
        let (label, confidence) = tree.predict(&[9.0]).unwrap();
        assert_eq!(label, 0);
        assert_abs_diff_eq!(confidence, 0.5);
    }

    #[test]
    fn single_class_training_set_is_rejected() {
        let features = vec![vec![0.0], vec![1.0]];
        assert!(DecisionTree::train(&features, &[1, 1], 2, &ClassifierConfig::default()).is_err());
        assert!(KnnModel::train(&features, &[1, 1], 2, &ClassifierConfig::default()).is_err());
        assert!(MlpClassifier::train(&features, &[1, 1], 2, &quick_cfg(0)).is_err());
    }

    // -- k-NN --------------------------------------------------------------

    #[test]
    fn knn_one_recovers_each_training_point() {
        let features: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let labels: Vec<u32> = (0..12).map(|i| i % 3).collect();
        let cfg = ClassifierConfig {
            knn_k: 1,
            ..ClassifierConfig::default()
        };
        let model = KnnModel::train(&features, &labels, 3, &cfg).unwrap();
        for (x, &y) in features.iter().zip(&labels) {
            assert_eq!(model.predict(x).unwrap(), (y, 1.0));
        }
    }

    #[test]
    fn knn_majority_two_to_one() {
        let features = vec![vec![0.0], vec![0.2], vec![0.4], vec![9.0]];
        let labels = vec![0, 0, 1, 1];
        let cfg = ClassifierConfig {
            knn_k: 3,
            ..ClassifierConfig::default()
        };
        let model = KnnModel::train(&features, &labels, 2, &cfg).unwrap();
        let (label, share) = model.predict(&[0.1]).unwrap();
        assert_eq!(label, 0);
        assert_abs_diff_eq!(share, 2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn knn_matches_a_brute_force_oracle() {
        let mut rng = SeedPolicy::new(41).rng("test.knn");
        let features: Vec<Vec<f64>> = (0..60)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let labels: Vec<u32> = (0..60).map(|_| rng.random_range(0..3)).collect();
        let cfg = ClassifierConfig {
            knn_k: 5,
            ..ClassifierConfig::default()
        };
        let model = KnnModel::train(&features, &labels, 3, &cfg).unwrap();
        for _ in 0..50 {
            let q: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            // Independent oracle: exhaustive sort on (distance, index), then
            // a first-max vote over the head of the ranking.
            let mut ranked: Vec<(f64, usize)> = features
                .iter()
                .enumerate()
                .map(|(i, f)| {
                    let d2: f64 = q.iter().zip(f).map(|(a, b)| (a - b) * (a - b)).sum();
                    (d2.sqrt(), i)
                })
                .collect();
            ranked.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut votes = [0usize; 3];
            for &(_, i) in ranked.iter().take(5) {
                votes[labels[i] as usize] += 1;
            }
            let expect = (0..3).max_by_key(|&c| (votes[c], 2 - c)).unwrap() as u32;
            assert_eq!(model.predict(&q).unwrap().0, expect);
            let got: Vec<usize> = model.nearest(&q).unwrap().iter().map(|&(i, _)| i).collect();
            let want: Vec<usize> = ranked.iter().take(5).map(|&(_, i)| i).collect();
            assert_eq!(got, want);
        }
    }

    // -- MLP ---------------------------------------------------------------

    /// Two well-separated Gaussian blobs with one label each.
    fn blob_data(n_per_class: usize, dim: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<u32>) {
        let mut rng = SeedPolicy::new(seed).rng("test.blobs");
        let normal = Normal::new(0.0, 0.4).unwrap();
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for class in 0..2u32 {
            let centre = if class == 0 { -1.5 } else { 1.5 };
            for _ in 0..n_per_class {
                features.push((0..dim).map(|_| centre + normal.sample(&mut rng)).collect());
                labels.push(class);
            }
        }
        (features, labels)
    }

    #[test]
    fn mlp_separates_planted_blobs() {
        let (features, labels) = blob_data(60, 4, 7);
        let model = MlpClassifier::train(&features, &labels, 2, &quick_cfg(7)).unwrap();
        let hits = features
            .iter()
            .zip(&labels)
            .filter(|(x, &y)| model.predict(x).unwrap().0 == y)
            .count();
        assert!(
            hits as f64 / labels.len() as f64 >= 0.98,
            "training accuracy {}",
            hits as f64 / labels.len() as f64
        );
    }

    #[test]
    fn mlp_probabilities_sum_to_one() {
        let (features, labels) = blob_data(20, 3, 9);
        let model = MlpClassifier::train(&features, &labels, 2, &quick_cfg(9)).unwrap();
        let mut rng = SeedPolicy::new(9).rng("test.query");
        for _ in 0..25 {
            let q: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let (_, p) = model.predict(&q).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(p.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn uniform_head_loss_is_log_class_count() {
        let policy = SeedPolicy::new(0);
        let mut net = MlpNet::init(2, 4, 3, &policy);
        net.set_params_flat(&vec![0.0; net.n_params()]);
        let (loss, _) = mlp_batch_loss_and_grad(&net, &[&[0.3, -0.8], &[1.0, 2.0]], &[0, 2]);
        assert_abs_diff_eq!(loss, 3.0f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn mlp_gradients_match_finite_differences() {
        let policy = SeedPolicy::new(13);
        let mut net = MlpNet::init(3, 4, 3, &policy);
        let mut rng = policy.rng("test.fd");
        let xs: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let refs: Vec<&[f64]> = xs.iter().map(|v| v.as_slice()).collect();
        let ys = vec![0u32, 2, 1, 1, 0];
        let (_, g) = mlp_batch_loss_and_grad(&net, &refs, &ys);
        let mut analytic = Vec::new();
        analytic.extend_from_slice(g.w1.data());
        analytic.extend_from_slice(&g.b1);
        analytic.extend_from_slice(g.w2.data());
        analytic.extend_from_slice(&g.b2);
        let params = net.params_flat();
        let h = 1e-4;
        for i in 0..params.len() {
            let mut plus = params.clone();
            plus[i] += h;
            net.set_params_flat(&plus);
            let lp = mlp_batch_loss_and_grad(&net, &refs, &ys).0;
            let mut minus = params.clone();
            minus[i] -= h;
            net.set_params_flat(&minus);
            let lm = mlp_batch_loss_and_grad(&net, &refs, &ys).0;
            let fd = (lp - lm) / (2.0 * h);
            let denom = analytic[i].abs().max(fd.abs()).max(1.0);
            assert!(
                (analytic[i] - fd).abs() / denom < 1e-4,
                "param {i}: analytic {} vs fd {fd}",
                analytic[i]
            );
        }
    }

    #[test]
    fn mlp_training_is_deterministic() {
        let (features, labels) = blob_data(25, 3, 11);
        let a = MlpClassifier::train(&features, &labels, 2, &quick_cfg(11)).unwrap();
        let b = MlpClassifier::train(&features, &labels, 2, &quick_cfg(11)).unwrap();
        assert_eq!(a.net.params_flat(), b.net.params_flat());
    }

    // -- adaptive classifier -----------------------------------------------

    /// Items split into two embedding clusters; each user's list stays in
    /// its own cluster and the label is the cluster id.
    fn cluster_lists(
        users_per_class: usize,
        items_per_class: usize,
        k: usize,
        seed: u64,
    ) -> (Vec<Vec<u32>>, Vec<u32>, UnifiedEmbedding) {
        let mut rng = SeedPolicy::new(seed).rng("test.clusters");
        let noise = Normal::new(0.0, 0.15).unwrap();
        let dim = 4;
        let mut rows = Vec::new();
        for class in 0..2 {
            let centre = if class == 0 { -1.0 } else { 1.0 };
            for _ in 0..items_per_class {
                rows.push((0..dim).map(|_| centre + noise.sample(&mut rng)).collect());
            }
        }
        let e = table(rows);
        let mut lists = Vec::new();
        let mut labels = Vec::new();
        for class in 0..2u32 {
            let base = class * items_per_class as u32;
            for _ in 0..users_per_class {
                let mut list = Vec::with_capacity(k);
                while list.len() < k {
                    let item = base + rng.random_range(0..items_per_class as u32);
                    if !list.contains(&item) {
                        list.push(item);
                    }
                }
                lists.push(list);
                labels.push(class);
            }
        }
        (lists, labels, e)
    }

    #[test]
    fn adaptive_model_separates_cluster_pure_lists() {
        let (lists, labels, e) = cluster_lists(50, 30, 5, 3);
        // Interleave so the held-out tail covers both classes.
        let order: Vec<usize> = (0..50).flat_map(|i| [i, i + 50]).collect();
        let lists: Vec<Vec<u32>> = order.iter().map(|&i| lists[i].clone()).collect();
        let labels: Vec<u32> = order.iter().map(|&i| labels[i]).collect();
        let (train_n, total) = (80usize, lists.len());
        let model = AdaptiveClassifier::train(
            &lists[..train_n],
            &labels[..train_n],
            &e,
            2,
            AggregationMode::Dynamic,
            &quick_cfg(3),
        )
        .unwrap();
        let held_lists = &lists[train_n..total];
        let held_labels = &labels[train_n..total];
        let predictions: Vec<u32> = held_lists
            .iter()
            .map(|l| model.predict(l, &e).unwrap().0)
            .collect();
        let m = evaluate_predictions(&predictions, held_labels, 2).unwrap();
        assert!(m.accuracy >= 0.9, "held-out accuracy {}", m.accuracy);
        for class in &m.per_class {
            assert!(class.recall >= 0.85, "per-class recall {}", class.recall);
        }
    }

    #[test]
    fn adaptive_probabilities_sum_to_one() {
        let (lists, labels, e) = cluster_lists(10, 10, 3, 5);
        let model = AdaptiveClassifier::train(
            &lists,
            &labels,
            &e,
            2,
            AggregationMode::Dynamic,
            &quick_cfg(5),
        )
        .unwrap();
        for list in &lists {
            let (_, p) = model.predict(list, &e).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn adaptive_composite_gradients_match_finite_differences() {
        let mut rng = SeedPolicy::new(17).rng("test.fd");
        let e = table(
            (0..6)
                .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect(),
        );
        let lists = vec![vec![0u32, 2, 4], vec![1, 3, 5], vec![0, 1, 5], vec![2, 3, 4]];
        let labels = vec![0u32, 1, 1, 0];
        for point in 0..5 {
            let mut model = AdaptiveClassifier {
                w_a: (0..3).map(|_| rng.random_range(-0.5..0.5)).collect(),
                b_a: rng.random_range(-0.5..0.5),
                head: MlpNet::init(3, 6, 2, &SeedPolicy::new(17 + point)),
                mode: AggregationMode::Dynamic,
                n_classes: 2,
            };
            let (_, analytic) = model.batch_loss_and_grad(&lists, &labels, &e).unwrap();
            let params = model.params_flat();
            let h = 1e-4;
            for i in 0..params.len() {
                let mut plus = params.clone();
                plus[i] += h;
                model.set_params_flat(&plus).unwrap();
                let lp = model.batch_loss(&lists, &labels, &e).unwrap();
                let mut minus = params.clone();
                minus[i] -= h;
                model.set_params_flat(&minus).unwrap();
                let lm = model.batch_loss(&lists, &labels, &e).unwrap();
                let fd = (lp - lm) / (2.0 * h);
                let denom = analytic[i].abs().max(fd.abs()).max(1.0);
                assert!(
                    (analytic[i] - fd).abs() / denom < 1e-4,
                    "point {point}, param {i}: analytic {} vs fd {fd}",
                    analytic[i]
                );
            }
        }
    }

    #[test]
    fn bias_gradient_is_exactly_zero() {
        let (lists, labels, e) = cluster_lists(4, 6, 3, 19);
        let model = AdaptiveClassifier {
            w_a: vec![0.3, -0.2, 0.5, 0.1],
            b_a: 0.7,
            head: MlpNet::init(4, 8, 2, &SeedPolicy::new(19)),
            mode: AggregationMode::Dynamic,
            n_classes: 2,
        };
        let (_, grad) = model.batch_loss_and_grad(&lists, &labels, &e).unwrap();
        assert_eq!(grad[model.dim()], 0.0);
    }

    #[test]
    fn frozen_weights_reproduce_the_mean_pooled_mlp_bitwise() {
        let (lists, labels, e) = cluster_lists(20, 15, 4, 23);
        let dim = e.dim();
        let cfg = ClassifierConfig {
            hidden: 2 * dim,
            learning_rate: 0.05,
            batch_size: 8,
            max_epochs: 40,
            seed: 23,
            ..ClassifierConfig::default()
        };
        let frozen =
            AdaptiveClassifier::train(&lists, &labels, &e, 2, AggregationMode::Sum, &cfg).unwrap();
        let features: Vec<Vec<f64>> = lists
            .iter()
            .map(|l| aggregate(l, &e, AggregationMode::Sum, None).unwrap())
            .collect();
        let plain = MlpClassifier::train(&features, &labels, 2, &cfg).unwrap();
        assert_eq!(frozen.head.params_flat(), plain.net.params_flat());
        for (list, x) in lists.iter().zip(&features) {
            let (la, pa) = frozen.predict(list, &e).unwrap();
            let (lb, pb) = plain.predict(x).unwrap();
            assert_eq!(la, lb);
            let bits_a: Vec<u64> = pa.iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = pb.iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
    }

    #[test]
    fn permuting_list_items_leaves_the_prediction_stable() {
        let (lists, labels, e) = cluster_lists(15, 12, 5, 29);
        let model = AdaptiveClassifier::train(
            &lists,
            &labels,
            &e,
            2,
            AggregationMode::Dynamic,
            &quick_cfg(29),
        )
        .unwrap();
        for list in lists.iter().take(10) {
            let mut reversed = list.clone();
            reversed.reverse();
            let (la, pa) = model.predict(list, &e).unwrap();
            let (lb, pb) = model.predict(&reversed, &e).unwrap();
            assert_eq!(la, lb);
            for (a, b) in pa.iter().zip(&pb) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn adaptive_rejects_bad_training_input() {
        let e = table(vec![vec![1.0], vec![2.0]]);
        let cfg = quick_cfg(0);
        let lists = vec![vec![0u32], vec![1]];
        assert!(
            AdaptiveClassifier::train(&lists, &[0, 0], &e, 2, AggregationMode::Dynamic, &cfg)
                .is_err()
        );
        assert!(AdaptiveClassifier::train(
            &[vec![0], vec![7]],
            &[0, 1],
            &e,
            2,
            AggregationMode::Dynamic,
            &cfg
        )
        .is_err());
        assert!(AdaptiveClassifier::train(
            &[vec![0], vec![]],
            &[0, 1],
            &e,
            2,
            AggregationMode::Dynamic,
            &cfg
        )
        .is_err());
    }

    // -- checkpoints -------------------------------------------------------

    #[test]
    fn classifier_checkpoints_round_trip() {
        let (features, labels) = blob_data(15, 3, 31);
        let dir = tempfile::tempdir().unwrap();
        for kind in ClassifierKind::all() {
            let model = train_classifier(&features, &labels, 2, kind, &quick_cfg(31)).unwrap();
            let path = dir.path().join(kind.as_str());
            model.save(&path).unwrap();
            let loaded = Classifier::load(&path).unwrap();
            assert_eq!(loaded.kind(), kind);
            for x in &features {
                let (la, ca) = model.predict(x).unwrap();
                let (lb, cb) = loaded.predict(x).unwrap();
                assert_eq!(la, lb);
                assert_eq!(ca.to_bits(), cb.to_bits());
            }
        }
    }

    #[test]
    fn adaptive_checkpoint_round_trips() {
        let (lists, labels, e) = cluster_lists(8, 8, 3, 37);
        let model = AdaptiveClassifier::train(
            &lists,
            &labels,
            &e,
            2,
            AggregationMode::Dynamic,
            &quick_cfg(37),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        model.save(dir.path()).unwrap();
        let loaded = AdaptiveClassifier::load(dir.path()).unwrap();
        assert_eq!(loaded.mode(), AggregationMode::Dynamic);
        assert_eq!(model.params_flat(), loaded.params_flat());
        for list in &lists {
            let (la, pa) = model.predict(list, &e).unwrap();
            let (lb, pb) = loaded.predict(list, &e).unwrap();
            assert_eq!(la, lb);
            assert_eq!(pa, pb);
        }
    }
}
