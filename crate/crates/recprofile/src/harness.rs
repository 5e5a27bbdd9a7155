//! End-to-end scenario orchestration: provider partitions, the four analyst
//! pipelines, metric evaluation over target users, the same-category list
//! perturbation, and the seeded (α, β) sweep with resumable per-cell caches.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{
    apply_alignment, augment_list, cooccurrence_targets, train_alignment, unify_embeddings,
    AlignConfig, AlignStats, Provenance, UnifiedEmbedding,
};
use crate::classify::{
    aggregate, evaluate_predictions, featurize_multi_hot, train_classifier, AdaptiveClassifier,
    AggregationMode, ClassifierConfig, ClassifierKind, EvalMetrics,
};
use crate::data::{
    floor_frac, partition_providers, split_dataset, Dataset, ProviderPartition, Split,
};
use crate::error::{Error, Result};
use crate::ingest::{hash_embed_titles, load_embedding_table, EmbeddingTable};
use crate::rec::{train_recommender, RecKind, RecommenderModel, TrainConfig};
use crate::seed::SeedPolicy;
use crate::surrogate::{confirm_surrogate, RecListSet, SurrogateReport};

/// Where item content vectors come from: a pre-embedded table on disk, or
/// the built-in title hasher.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EmbeddingSource {
    File(PathBuf),
    Hash { dim: usize },
}

/// Classifier run in a scenario: one of the feature baselines, or the
/// adaptive list classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    Baseline(ClassifierKind),
    Rapi,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Baseline(kind) => kind.as_str(),
            Method::Rapi => "rapi",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rapi" | "adaptive" => Ok(Method::Rapi),
            other => Ok(Method::Baseline(other.parse()?)),
        }
    }
}

/// Everything one scenario run needs. `seed` is the master seed: the user
/// partition, the interaction split, and every stage-level seed derive from
/// it, so one value pins the whole pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub dataset_name: String,
    pub scenario: u8,
    pub attribute: String,
    /// Fraction of users releasing interaction histories.
    pub alpha: f64,
    /// Fraction of users releasing attribute labels.
    pub beta: f64,
    pub method: Method,
    /// Served list length.
    pub k: usize,
    /// Augmented list length for scenarios 3 and 4.
    pub k2: usize,
    pub original_kind: RecKind,
    /// Surrogate candidates tried in scenario 4.
    pub candidate_kinds: Vec<RecKind>,
    /// Pooling used by the adaptive classifier.
    pub aggregation: AggregationMode,
    pub embedding: EmbeddingSource,
    /// Recommender knobs shared by the original model and the surrogates.
    pub train: TrainConfig,
    pub classifier: ClassifierConfig,
    pub align: AlignConfig,
    /// Interaction split ratios (train, validation, test).
    pub split: (f64, f64, f64),
    /// When set, this fraction of every served list is replaced with
    /// same-category items before the analyst sees it.
    pub robustness: Option<f64>,
    pub seed: u64,
}

impl ScenarioConfig {
    /// Defaults for one scenario: baselines answer scenarios 1–2, the
    /// adaptive classifier answers 3–4.
    pub fn new(scenario: u8, attribute: impl Into<String>) -> Self {
        ScenarioConfig {
            dataset_name: "dataset".into(),
            scenario,
            attribute: attribute.into(),
            alpha: 0.1,
            beta: 0.1,
            method: if scenario >= 3 {
                Method::Rapi
            } else {
                Method::Baseline(ClassifierKind::Mlp)
            },
            k: 20,
            k2: 50,
            original_kind: RecKind::LightGcn,
            candidate_kinds: vec![RecKind::Mf, RecKind::NeuMf, RecKind::Ngcf],
            aggregation: AggregationMode::Dynamic,
            embedding: EmbeddingSource::Hash { dim: 32 },
            train: TrainConfig::default(),
            classifier: ClassifierConfig::default(),
            align: AlignConfig::default(),
            split: (0.8, 0.1, 0.1),
            robustness: None,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=4).contains(&self.scenario) {
            return Err(Error::invalid(format!(
                "scenario must lie in 1..=4, got {}",
                self.scenario
            )));
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!("{name} must lie in [0,1], got {v}")));
            }
        }
        if self.scenario == 4 && self.alpha == 0.0 {
            return Err(Error::invalid(
                "scenario 4 needs interaction providers (alpha > 0)",
            ));
        }
        if self.k == 0 {
            return Err(Error::invalid("list length k must be positive"));
        }
        if self.k2 < self.k {
            return Err(Error::invalid(format!(
                "augmented length k2 = {} is shorter than k = {}",
                self.k2, self.k
            )));
        }
        match (self.scenario, self.method) {
            (1 | 2, Method::Rapi) => {
                return Err(Error::invalid(format!(
                    "scenario {} runs the feature baselines (dt, knn, mlp)",
                    self.scenario
                )));
            }
            (3 | 4, Method::Baseline(_)) => {
                return Err(Error::invalid(format!(
                    "scenario {} runs the adaptive classifier (rapi)",
                    self.scenario
                )));
            }
            _ => {}
        }
        if self.scenario == 4 && self.candidate_kinds.is_empty() {
            return Err(Error::invalid("scenario 4 needs surrogate candidates"));
        }
        if let Some(f) = self.robustness {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::invalid(format!(
                    "robustness fraction must lie in [0,1], got {f}"
                )));
            }
        }
        self.train.validate()?;
        self.classifier.validate()
    }
}

/// Outcome of one scenario run.
#[derive(Debug, Clone)]
pub struct ScenarioReport {
    pub dataset: String,
    pub scenario: u8,
    pub attribute: String,
    pub alpha: f64,
    pub beta: f64,
    pub method: String,
    pub seed: u64,
    /// Labeled attribute providers the classifier trained on.
    pub n_train: usize,
    /// Labeled target users the metrics cover.
    pub n_eval: usize,
    pub metrics: EvalMetrics,
    /// (user index, predicted label code, confidence) per target user.
    pub predictions: Vec<(u32, u32, f64)>,
    pub runtime_s: f64,
    /// Surrogate tournament outcome (scenario 4 only).
    pub surrogate: Option<SurrogateReport>,
    /// Alignment residuals (scenarios 3–4, when an alignment was trained).
    pub alignment: Option<AlignStats>,
    /// True when alignment targets were co-occurrence pseudo-targets rather
    /// than trained surrogate embeddings.
    pub cooccurrence_fallback: bool,
    /// True when the evaluation truth covers a single class; metrics are
    /// still reported, macro-F1 averages over the declared label set.
    pub single_class_truth: bool,
}

/// Compares (user, label) predictions against (user, label) truth after
/// checking both cover exactly the same users.
pub fn evaluate(
    predictions: &[(u32, u32)],
    truth: &[(u32, u32)],
    n_classes: usize,
) -> Result<EvalMetrics> {
    if predictions.len() != truth.len() {
        return Err(Error::invalid(format!(
            "{} predictions against {} truth entries",
            predictions.len(),
            truth.len()
        )));
    }
    let mut p = predictions.to_vec();
    let mut t = truth.to_vec();
    p.sort_unstable_by_key(|&(u, _)| u);
    t.sort_unstable_by_key(|&(u, _)| u);
    for (&(pu, _), &(tu, _)) in p.iter().zip(&t) {
        if pu != tu {
            return Err(Error::invalid(
                "predictions and truth cover different users",
            ));
        }
    }
    let pred: Vec<u32> = p.iter().map(|&(_, y)| y).collect();
    let tru: Vec<u32> = t.iter().map(|&(_, y)| y).collect();
    evaluate_predictions(&pred, &tru, n_classes)
}

/// Runs one scenario end to end and reports metrics over the labeled target
/// users. `cache_dir`, when given, holds the trained original model per
/// (dataset, kind, train-config, seed) so repeated runs skip that training.
pub fn run_scenario(
    dataset: &Dataset,
    cfg: &ScenarioConfig,
    cache_dir: Option<&Path>,
) -> Result<ScenarioReport> {
    let started = Instant::now();
    cfg.validate()?;
    let attr = dataset
        .attribute(&cfg.attribute)
        .ok_or_else(|| Error::missing("attribute", &cfg.attribute))?;
    let n_classes = attr.label_count();
    let partition = partition_providers(dataset, cfg.alpha, cfg.beta, cfg.seed)?;
    let labeled = |users: &[u32]| -> Vec<(u32, u32)> {
        users
            .iter()
            .filter_map(|&u| attr.value(u).map(|code| (u, code)))
            .collect()
    };
    let train_users = labeled(&partition.attribute_providers);
    let eval_users = labeled(&partition.target_users);
    if train_users.is_empty() {
        return Err(Error::Dataset(format!(
            "no labeled attribute providers at beta = {}",
            cfg.beta
        )));
    }
    if eval_users.is_empty() {
        return Err(Error::Dataset("no labeled target users".into()));
    }
    // Providers never enter the evaluation pool; the partition guarantees it
    // and the metrics depend on it.
    assert!(
        eval_users
            .iter()
            .all(|&(u, _)| !partition.is_attribute_provider(u)),
        "target users must exclude attribute providers"
    );

    let policy = SeedPolicy::new(cfg.seed);
    let split = split_dataset(dataset, cfg.split, cfg.seed)?;
    let original = original_model(dataset, cfg, &split, cache_dir, &policy)?;
    let full_history = dataset.user_items();
    let all_users: Vec<u32> = (0..dataset.n_users() as u32).collect();
    // What every user is served: top-k over items outside their history.
    let mut lists = RecListSet::from_model(&original, &all_users, cfg.k, &full_history)?;
    if let Some(fraction) = cfg.robustness {
        lists = apply_robustness_strategy(
            &lists,
            dataset,
            fraction,
            policy.derive("harness.robustness"),
        )?
        .0;
    }

    let mut surrogate_report = None;
    let mut alignment = None;
    let mut fallback = false;
    let predictions: Vec<(u32, u32, f64)> = match cfg.scenario {
        1 => {
            let featurize = |users: &[(u32, u32)]| -> Result<Vec<Vec<f64>>> {
                users
                    .iter()
                    .map(|&(u, _)| {
                        featurize_multi_hot(lists.get(u).expect("all users listed"),
                                            dataset.n_items())
                    })
                    .collect()
            };
            run_baseline(
                cfg,
                &policy,
                &featurize(&train_users)?,
                &train_users,
                &featurize(&eval_users)?,
                &eval_users,
                n_classes,
            )?
        }
        2 => {
            let e = model_embeddings(&original, dataset)?;
            let featurize = |users: &[(u32, u32)]| -> Result<Vec<Vec<f64>>> {
                users
                    .iter()
                    .map(|&(u, _)| {
                        aggregate(
                            lists.get(u).expect("all users listed"),
                            &e,
                            AggregationMode::Sum,
                            None,
                        )
                    })
                    .collect()
            };
            run_baseline(
                cfg,
                &policy,
                &featurize(&train_users)?,
                &train_users,
                &featurize(&eval_users)?,
                &eval_users,
                n_classes,
            )?
        }
        3 => {
            // No interaction data reaches the analyst here, so alignment
            // targets are co-occurrence pseudo-targets built from the
            // observed lists themselves.
            fallback = true;
            let content = content_embeddings(dataset, &cfg.embedding,
                                             policy.derive("harness.content"))?;
            let mut align_cfg = cfg.align.clone();
            align_cfg.seed = policy.derive("harness.align");
            let (e, stats) = unified_space_fallback(
                dataset,
                &lists,
                &content,
                cfg.train.dim,
                &align_cfg,
                policy.derive("harness.fallback"),
            )?;
            alignment = Some(stats);
            run_adaptive(cfg, &policy, dataset, &lists, &e, &train_users, &eval_users,
                         n_classes, &partition)?
        }
        4 => {
            let mut cand_cfg = cfg.train.clone();
            cand_cfg.seed = policy.derive("harness.surrogate");
            let candidates: Vec<(RecKind, TrainConfig)> = cfg
                .candidate_kinds
                .iter()
                .map(|&kind| (kind, cand_cfg.clone()))
                .collect();
            let (srep, smodel) = confirm_surrogate(
                dataset,
                &split,
                &partition.interaction_providers,
                &candidates,
                &lists,
            )?;
            surrogate_report = Some(srep);
            let content = content_embeddings(dataset, &cfg.embedding,
                                             policy.derive("harness.content"))?;
            let mut align_cfg = cfg.align.clone();
            align_cfg.seed = policy.derive("harness.align");
            let (e, stats) =
                unified_space_surrogate(dataset, &smodel, &partition, &content, &align_cfg)?;
            alignment = stats;
            run_adaptive(cfg, &policy, dataset, &lists, &e, &train_users, &eval_users,
                         n_classes, &partition)?
        }
        _ => unreachable!("validated above"),
    };

    let truth: Vec<(u32, u32)> = eval_users.clone();
    let predicted: Vec<(u32, u32)> = predictions.iter().map(|&(u, y, _)| (u, y)).collect();
    let metrics = evaluate(&predicted, &truth, n_classes)?;
    let mut classes_present: Vec<u32> = truth.iter().map(|&(_, y)| y).collect();
    classes_present.sort_unstable();
    classes_present.dedup();
    Ok(ScenarioReport {
        dataset: cfg.dataset_name.clone(),
        scenario: cfg.scenario,
        attribute: cfg.attribute.clone(),
        alpha: cfg.alpha,
        beta: cfg.beta,
        method: cfg.method.to_string(),
        seed: cfg.seed,
        n_train: train_users.len(),
        n_eval: eval_users.len(),
        metrics,
        predictions,
        runtime_s: started.elapsed().as_secs_f64(),
        surrogate: surrogate_report,
        alignment,
        cooccurrence_fallback: fallback,
        single_class_truth: classes_present.len() < 2,
    })
}

/// Trains (or loads from `cache_dir`) the deployed recommender. The cache
/// key fingerprints everything that shapes the model, so stale entries
/// cannot be confused with current ones.
fn original_model(
    dataset: &Dataset,
    cfg: &ScenarioConfig,
    split: &Split,
    cache_dir: Option<&Path>,
    policy: &SeedPolicy,
) -> Result<RecommenderModel> {
    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = policy.derive("harness.original");
    let key = {
        let blob = format!(
            "{}|{}|{:?}|{:?}|{}",
            cfg.dataset_name,
            cfg.original_kind,
            train_cfg,
            cfg.split,
            cfg.seed
        );
        format!(
            "rec-{}-{:016x}",
            cfg.original_kind,
            crate::seed::fnv1a(blob.as_bytes())
        )
    };
    if let Some(dir) = cache_dir {
        let path = dir.join(&key);
        if path.join("manifest.json").is_file() {
            return RecommenderModel::load(&path);
        }
    }
    let model = train_recommender(dataset, split, &train_cfg, cfg.original_kind)?;
    if let Some(dir) = cache_dir {
        model.save(&dir.join(&key))?;
    }
    Ok(model)
}

/// The deployed model's item vectors as a unified table in item-index order.
fn model_embeddings(model: &RecommenderModel, dataset: &Dataset) -> Result<UnifiedEmbedding> {
    let table = model.export_item_embeddings();
    let vecs = (0..dataset.n_items() as u32)
        .map(|i| {
            table
                .get(dataset.item_id(i))
                .map(|v| v.to_vec())
                .ok_or_else(|| Error::missing("item embedding", dataset.item_id(i)))
        })
        .collect::<Result<Vec<_>>>()?;
    UnifiedEmbedding::from_vectors(vecs, Provenance::Surrogate)
}

/// Item content vectors covering the whole catalogue, loaded from a file
/// (every item must be present) or hashed from titles.
pub fn content_embeddings(
    dataset: &Dataset,
    source: &EmbeddingSource,
    seed: u64,
) -> Result<EmbeddingTable> {
    match source {
        EmbeddingSource::File(path) => {
            let table = load_embedding_table(path)?;
            for i in 0..dataset.n_items() as u32 {
                if table.get(dataset.item_id(i)).is_none() {
                    return Err(Error::missing("content embedding", dataset.item_id(i)));
                }
            }
            Ok(table)
        }
        EmbeddingSource::Hash { dim } => hash_embed_titles(dataset, *dim, seed),
    }
}

/// Subset of a table restricted to `ids`, in the given order.
fn restrict(table: &EmbeddingTable, ids: &[String]) -> Result<EmbeddingTable> {
    let rows = ids
        .iter()
        .map(|id| {
            table
                .get(id)
                .map(|v| (id.clone(), v.to_vec()))
                .ok_or_else(|| Error::missing("embedding", id))
        })
        .collect::<Result<Vec<_>>>()?;
    EmbeddingTable::from_rows(table.dim(), rows)
}

/// Unified item space when no interaction data is available: content
/// vectors trained against co-occurrence pseudo-targets of width `l3`
/// (derived from the observed lists), then applied to the whole catalogue.
pub fn unified_space_fallback(
    dataset: &Dataset,
    lists: &RecListSet,
    content: &EmbeddingTable,
    l3: usize,
    align_cfg: &AlignConfig,
    target_seed: u64,
) -> Result<(UnifiedEmbedding, AlignStats)> {
    let pseudo = cooccurrence_targets(lists, dataset, content, l3, target_seed)?;
    let observed: Vec<String> = pseudo.ids().to_vec();
    let content_observed = restrict(content, &observed)?;
    let (align_model, stats) = train_alignment(&content_observed, &pseudo, align_cfg)?;
    let aligned_all = apply_alignment(&align_model, content)?;
    let e = unify_embeddings(dataset, &aligned_all, &EmbeddingTable::new(aligned_all.dim()))?;
    Ok((e, stats))
}

/// Unified item space from a confirmed surrogate: provider-touched items
/// keep their surrogate vectors, the rest get content vectors aligned into
/// that space. Returns no alignment stats when the surrogate already covers
/// every item.
pub fn unified_space_surrogate(
    dataset: &Dataset,
    surrogate: &RecommenderModel,
    partition: &ProviderPartition,
    content: &EmbeddingTable,
    align_cfg: &AlignConfig,
) -> Result<(UnifiedEmbedding, Option<AlignStats>)> {
    let (v_l, v_v) = crate::data::derive_item_partition(dataset, partition);
    let surrogate_table = surrogate.export_item_embeddings();
    if v_v.is_empty() {
        // Every item was touched by a provider; the surrogate space already
        // covers the catalogue.
        let e = unify_embeddings(
            dataset,
            &EmbeddingTable::new(surrogate_table.dim()),
            &surrogate_table,
        )?;
        return Ok((e, None));
    }
    let ids_of = |items: &[u32]| -> Vec<String> {
        items.iter().map(|&i| dataset.item_id(i).to_string()).collect()
    };
    let target_vl = restrict(&surrogate_table, &ids_of(&v_l))?;
    let content_vl = restrict(content, &ids_of(&v_l))?;
    let content_vv = restrict(content, &ids_of(&v_v))?;
    let (align_model, stats) = train_alignment(&content_vl, &target_vl, align_cfg)?;
    let aligned_vv = apply_alignment(&align_model, &content_vv)?;
    let e = unify_embeddings(dataset, &aligned_vv, &target_vl)?;
    Ok((e, Some(stats)))
}

/// Scenario 1/2 path: train the configured baseline on provider features,
/// predict every target user.
fn run_baseline(
    cfg: &ScenarioConfig,
    policy: &SeedPolicy,
    train_feats: &[Vec<f64>],
    train_users: &[(u32, u32)],
    eval_feats: &[Vec<f64>],
    eval_users: &[(u32, u32)],
    n_classes: usize,
) -> Result<Vec<(u32, u32, f64)>> {
    let Method::Baseline(kind) = cfg.method else {
        unreachable!("validated against the scenario");
    };
    let labels: Vec<u32> = train_users.iter().map(|&(_, y)| y).collect();
    let mut cla_cfg = cfg.classifier.clone();
    cla_cfg.seed = policy.derive("harness.classifier");
    let model = train_classifier(train_feats, &labels, n_classes, kind, &cla_cfg)?;
    eval_users
        .iter()
        .zip(eval_feats)
        .map(|(&(u, _), x)| {
            let (label, confidence) = model.predict(x)?;
            Ok((u, label, confidence))
        })
        .collect()
}

/// Scenario 3/4 path: augment every relevant list to `k2` in the unified
/// space, train the adaptive classifier on providers, predict targets.
#[allow(clippy::too_many_arguments)]
fn run_adaptive(
    cfg: &ScenarioConfig,
    policy: &SeedPolicy,
    dataset: &Dataset,
    lists: &RecListSet,
    e: &UnifiedEmbedding,
    train_users: &[(u32, u32)],
    eval_users: &[(u32, u32)],
    n_classes: usize,
    partition: &ProviderPartition,
) -> Result<Vec<(u32, u32, f64)>> {
    let histories = dataset.user_items();
    let augment_for = |user: u32| -> Result<Vec<u32>> {
        let list = lists.get(user).expect("all users listed");
        // Candidates are items the analyst would consider novel: outside the
        // list, and outside the history when the user disclosed one
        // (interaction providers in scenario 4).
        let known_history = (cfg.scenario == 4 && partition.is_interaction_provider(user))
            .then(|| &histories[user as usize]);
        let candidates: Vec<u32> = (0..dataset.n_items() as u32)
            .filter(|i| !list.contains(i))
            .filter(|i| known_history.is_none_or(|h| h.binary_search(i).is_err()))
            .collect();
        Ok(augment_list(e, list, &candidates, cfg.k2)?
            .into_iter()
            .map(|(item, _)| item)
            .collect())
    };
    let augment_all = |users: &[(u32, u32)]| -> Result<Vec<Vec<u32>>> {
        users.iter().map(|&(u, _)| augment_for(u)).collect()
    };
    let train_lists = augment_all(train_users)?;
    let eval_lists = augment_all(eval_users)?;
    let labels: Vec<u32> = train_users.iter().map(|&(_, y)| y).collect();
    let mut cla_cfg = cfg.classifier.clone();
    cla_cfg.seed = policy.derive("harness.classifier");
    let model = AdaptiveClassifier::train(
        &train_lists,
        &labels,
        e,
        n_classes,
        cfg.aggregation,
        &cla_cfg,
    )?;
    eval_users
        .iter()
        .zip(&eval_lists)
        .map(|(&(u, _), list)| {
            let (label, probs) = model.predict(list, e)?;
            Ok((u, label, probs[label as usize]))
        })
        .collect()
}

/// Writes predictions as tab-delimited (user_id, attribute, predicted,
/// probability) rows with decoded labels.
pub fn write_predictions(
    path: &Path,
    dataset: &Dataset,
    attribute: &str,
    predictions: &[(u32, u32, f64)],
) -> Result<()> {
    let attr = dataset
        .attribute(attribute)
        .ok_or_else(|| Error::missing("attribute", attribute))?;
    let mut out = String::from("user_id\tattribute\tpredicted\tprobability\n");
    for &(u, code, prob) in predictions {
        out.push_str(&format!(
            "{}\t{attribute}\t{}\t{prob}\n",
            dataset.user_id(u),
            attr.label_of(code)
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Robustness perturbation
// ---------------------------------------------------------------------------

/// Counts from one perturbation pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RobustnessStats {
    /// Positions whose item was swapped for a same-category alternative.
    pub replaced: usize,
    /// Positions left as-is because no same-category alternative existed.
    pub unchanged: usize,
}

/// Replaces `⌊fraction·K⌋` uniformly chosen positions of every list with a
/// uniformly chosen same-category item not already in that list. Positions
/// with no available replacement stay untouched and are counted.
pub fn apply_robustness_strategy(
    lists: &RecListSet,
    dataset: &Dataset,
    fraction: f64,
    seed: u64,
) -> Result<(RecListSet, RobustnessStats)> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::invalid(format!(
            "fraction must lie in [0,1], got {fraction}"
        )));
    }
    let per_list = floor_frac(fraction, lists.k());
    let mut by_category: HashMap<&str, Vec<u32>> = HashMap::new();
    for i in 0..dataset.n_items() as u32 {
        if let Some(meta) = dataset.item_meta(i) {
            by_category.entry(meta.category.as_str()).or_default().push(i);
        }
    }
    let mut rng = SeedPolicy::new(seed).rng("harness.robustness");
    let mut out = RecListSet::new(lists.k());
    let mut stats = RobustnessStats::default();
    for user in lists.users() {
        let mut list = lists.get(user).expect("listed user").to_vec();
        let mut positions: Vec<usize> = (0..list.len()).collect();
        positions.shuffle(&mut rng);
        positions.truncate(per_list);
        positions.sort_unstable();
        for p in positions {
            let Some(meta) = dataset.item_meta(list[p]) else {
                stats.unchanged += 1;
                continue;
            };
            let pool: Vec<u32> = by_category[meta.category.as_str()]
                .iter()
                .copied()
                .filter(|i| !list.contains(i))
                .collect();
            if pool.is_empty() {
                stats.unchanged += 1;
                continue;
            }
            list[p] = pool[rng.random_range(0..pool.len())];
            stats.replaced += 1;
        }
        out.insert(user, list)?;
    }
    Ok((out, stats))
}

// ---------------------------------------------------------------------------
// Sweep
// ---------------------------------------------------------------------------

/// One result row; this is also the cached per-cell artifact and the
/// results.csv schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRow {
    pub dataset: String,
    pub scenario: u8,
    pub method: String,
    pub attribute: String,
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub runtime_s: f64,
}

/// One aggregated.csv row: the seed mean of a cell group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub dataset: String,
    pub scenario: u8,
    pub method: String,
    pub attribute: String,
    pub alpha: f64,
    pub beta: f64,
    pub n_seeds: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
}

/// Grid specification over one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub base: ScenarioConfig,
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
}

impl SweepSpec {
    /// The default grid: given α and β values, the scenario's own method,
    /// three seeds.
    pub fn new(base: ScenarioConfig, alphas: Vec<f64>, betas: Vec<f64>) -> Self {
        let methods = vec![base.method];
        SweepSpec {
            base,
            alphas,
            betas,
            methods,
            seeds: vec![0, 1, 2],
        }
    }

    fn cells(&self) -> Vec<(Method, f64, f64, u64)> {
        let mut cells = Vec::new();
        for &m in &self.methods {
            for &a in &self.alphas {
                for &b in &self.betas {
                    for &s in &self.seeds {
                        cells.push((m, a, b, s));
                    }
                }
            }
        }
        cells
    }

    fn cell_config(&self, method: Method, alpha: f64, beta: f64, seed: u64) -> ScenarioConfig {
        let mut cfg = self.base.clone();
        cfg.method = method;
        cfg.alpha = alpha;
        cfg.beta = beta;
        cfg.seed = seed;
        cfg
    }
}

/// All rows plus the cells that failed, as (cell id, error text).
#[derive(Debug, Clone, Default)]
pub struct SweepTable {
    pub rows: Vec<CellRow>,
    pub failed: Vec<(String, String)>,
}

fn cell_id(scenario: u8, method: Method, alpha: f64, beta: f64, seed: u64) -> String {
    format!("cell-s{scenario}-{method}-a{alpha}-b{beta}-seed{seed}")
}

/// Runs the grid. Every finished cell is cached as JSON under
/// `out_dir/cells`, so an interrupted sweep resumes where it stopped;
/// failures are recorded per cell without aborting the rest. Writes
/// `results.csv` (per seed) and `aggregated.csv` (seed means) in a canonical
/// order that does not depend on execution interleaving.
pub fn sweep(
    dataset: &Dataset,
    spec: &SweepSpec,
    out_dir: &Path,
    workers: usize,
) -> Result<SweepTable> {
    let cells_dir = out_dir.join("cells");
    let models_dir = out_dir.join("models");
    fs::create_dir_all(&cells_dir).map_err(|e| Error::io(&cells_dir, e))?;
    fs::create_dir_all(&models_dir).map_err(|e| Error::io(&models_dir, e))?;
    let cells = spec.cells();

    // Warm the original-model cache serially: concurrent cells would race to
    // train and write the same checkpoint.
    for &seed in &spec.seeds {
        if let Some(&(method, alpha, beta, _)) = cells.first() {
            let cfg = spec.cell_config(method, alpha, beta, seed);
            if cfg.validate().is_ok() {
                let policy = SeedPolicy::new(cfg.seed);
                if let Ok(split) = split_dataset(dataset, cfg.split, cfg.seed) {
                    let _ = original_model(dataset, &cfg, &split, Some(&models_dir), &policy);
                }
            }
        }
    }

    let run_cell = |&(method, alpha, beta, seed): &(Method, f64, f64, u64)| {
        let scenario = spec.base.scenario;
        let id = cell_id(scenario, method, alpha, beta, seed);
        let path = cells_dir.join(format!("{id}.json"));
        if let Ok(raw) = fs::read_to_string(&path) {
            if let Ok(row) = serde_json::from_str::<CellRow>(&raw) {
                return (id, Ok(row));
            }
            // Unreadable cache (e.g. a run was killed mid-write): recompute.
        }
        let cfg = spec.cell_config(method, alpha, beta, seed);
        let outcome = run_scenario(dataset, &cfg, Some(&models_dir)).map(|report| CellRow {
            dataset: cfg.dataset_name.clone(),
            scenario,
            method: method.to_string(),
            attribute: cfg.attribute.clone(),
            alpha,
            beta,
            seed,
            accuracy: report.metrics.accuracy,
            macro_f1: report.metrics.macro_f1,
            runtime_s: report.runtime_s,
        });
        if let Ok(row) = &outcome {
            let _ = fs::write(&path, serde_json::to_string_pretty(row).expect("row serializes"));
        }
        (id, outcome)
    };

    let outcomes: Vec<(String, Result<CellRow>)> = if workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::invalid(format!("worker pool: {e}")))?;
        pool.install(|| {
            use rayon::prelude::*;
            cells.par_iter().map(run_cell).collect()
        })
    } else {
        cells.iter().map(run_cell).collect()
    };

    let mut table = SweepTable::default();
    for (id, outcome) in outcomes {
        match outcome {
            Ok(row) => table.rows.push(row),
            Err(e) => table.failed.push((id, e.to_string())),
        }
    }
    sort_rows(&mut table.rows);
    write_results_csv(&out_dir.join("results.csv"), &table.rows)?;
    write_aggregated_csv(&out_dir.join("aggregated.csv"), &aggregate_rows(&table.rows))?;
    Ok(table)
}

fn sort_rows(rows: &mut [CellRow]) {
    rows.sort_by(|a, b| {
        (a.scenario, &a.method, &a.attribute)
            .cmp(&(b.scenario, &b.method, &b.attribute))
            .then(a.alpha.total_cmp(&b.alpha))
            .then(a.beta.total_cmp(&b.beta))
            .then(a.seed.cmp(&b.seed))
    });
}

/// Seed means in the order rows appear (rows are already canonical).
pub fn aggregate_rows(rows: &[CellRow]) -> Vec<AggregateRow> {
    let mut out: Vec<AggregateRow> = Vec::new();
    for row in rows {
        let same = |agg: &AggregateRow| {
            agg.dataset == row.dataset
                && agg.scenario == row.scenario
                && agg.method == row.method
                && agg.attribute == row.attribute
                && agg.alpha.to_bits() == row.alpha.to_bits()
                && agg.beta.to_bits() == row.beta.to_bits()
        };
        match out.last_mut() {
            Some(agg) if same(agg) => {
                agg.accuracy += row.accuracy;
                agg.macro_f1 += row.macro_f1;
                agg.n_seeds += 1;
            }
            _ => out.push(AggregateRow {
                dataset: row.dataset.clone(),
                scenario: row.scenario,
                method: row.method.clone(),
                attribute: row.attribute.clone(),
                alpha: row.alpha,
                beta: row.beta,
                n_seeds: 1,
                accuracy: row.accuracy,
                macro_f1: row.macro_f1,
            }),
        }
    }
    for agg in &mut out {
        agg.accuracy /= agg.n_seeds as f64;
        agg.macro_f1 /= agg.n_seeds as f64;
    }
    out
}

pub fn write_results_csv(path: &Path, rows: &[CellRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Dataset(e.to_string()))?;
    for row in rows {
        w.serialize(row).map_err(|e| Error::Dataset(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_aggregated_csv(path: &Path, rows: &[AggregateRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Dataset(e.to_string()))?;
    for row in rows {
        w.serialize(row).map_err(|e| Error::Dataset(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a results.csv or aggregated.csv written above.
pub fn read_csv<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Dataset(e.to_string()))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::Dataset(e.to_string())))
        .collect()
}
