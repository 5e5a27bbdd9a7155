//! Flat `key = value` run configuration.
//!
//! One file drives a whole run; command-line flags override file values,
//! which override built-in defaults. Keys are validated against a fixed
//! registry so a typo fails loudly instead of silently using a default.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::harness::{EmbeddingSource, ScenarioConfig, SweepSpec};

/// Every key a config file may set, with what it controls. Dots group
/// related knobs; the file format stays flat.
pub const KNOWN_KEYS: &[(&str, &str)] = &[
    ("dataset.name", "label stamped into result rows"),
    ("scenario", "analyst scenario, 1-4"),
    ("attribute", "attribute column to infer"),
    ("alpha", "fraction of users releasing interaction histories"),
    ("beta", "fraction of users releasing attribute labels"),
    ("method", "classifier: dt, knn, mlp, or rapi"),
    ("k", "served recommendation list length"),
    ("k2", "augmented list length (scenarios 3-4)"),
    ("original", "deployed recommender kind: mf, neumf, ngcf, lightgcn"),
    ("candidates", "comma-separated surrogate candidate kinds"),
    ("aggregation", "embedding pooling: sum, static, dynamic"),
    ("embedding.file", "item content embedding table path"),
    ("embedding.dim", "title-hash embedding width when no file is given"),
    ("split.train", "interaction split fraction for training"),
    ("split.validation", "interaction split fraction for validation"),
    ("split.test", "interaction split fraction for testing"),
    ("train.dim", "recommender latent dimension"),
    ("train.learning_rate", "recommender SGD step size"),
    ("train.batch_size", "recommender minibatch size"),
    ("train.max_epochs", "recommender epoch cap"),
    ("train.patience", "recommender early-stop patience (evaluations)"),
    ("train.eval_every", "recommender epochs between validation passes"),
    ("train.eval_k", "list length for validation hit-rate"),
    ("train.negatives", "sampled negatives per positive"),
    ("train.layers", "propagation depth for the graph recommenders"),
    ("train.l2_reg", "recommender L2 coefficient"),
    ("classifier.hidden", "classifier hidden width"),
    ("classifier.learning_rate", "classifier SGD step size"),
    ("classifier.batch_size", "classifier minibatch size"),
    ("classifier.max_epochs", "classifier epoch cap"),
    ("classifier.patience", "classifier early-stop patience (evaluations)"),
    ("classifier.eval_every", "classifier epochs between validation passes"),
    ("classifier.val_frac", "fraction of providers held out for early stop"),
    ("classifier.max_depth", "decision-tree depth cap"),
    ("classifier.knn_k", "nearest-neighbour vote size"),
    ("align.kind", "alignment map: linear or affine"),
    ("align.learning_rate", "alignment gradient step size"),
    ("align.epochs", "alignment full-batch epochs"),
    ("align.holdout_frac", "items held out for the alignment residual"),
    ("sweep.alphas", "comma-separated alpha grid"),
    ("sweep.betas", "comma-separated beta grid"),
    ("sweep.methods", "comma-separated methods to sweep"),
    ("sweep.seeds", "comma-separated master seeds"),
    ("robustness.fraction", "fraction of list positions to perturb"),
    ("seed", "master seed"),
    ("cache", "cache directory"),
    ("workers", "parallel sweep cells"),
];

fn check_key(key: &str) -> Result<()> {
    if KNOWN_KEYS.iter().any(|&(k, _)| k == key) {
        Ok(())
    } else {
        Err(Error::UnknownKey(key.to_string()))
    }
}

/// Parsed key-value pairs, insertion-order independent.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn new() -> Self {
        Config::default()
    }

    /// Reads `key = value` lines. Blank lines and `#` comments are skipped;
    /// an unknown key or a line without `=` is an error naming the line.
    pub fn parse_file(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Config::parse_str(&text, path)
    }

    pub fn parse_str(text: &str, origin: &Path) -> Result<Config> {
        let mut cfg = Config::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::parse(
                    origin,
                    lineno + 1,
                    format!("expected `key = value`, got {line:?}"),
                ));
            };
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::parse(origin, lineno + 1, e.to_string()))?;
        }
        Ok(cfg)
    }

    /// Sets one value after validating the key. Later writes win, which is
    /// how command-line overrides layer on top of a file.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        check_key(key)?;
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.values.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Typed read; `Ok(None)` when the key is absent, an error naming the
    /// key when the value does not parse.
    pub fn get_parsed<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        check_key(key)?;
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v.parse::<T>().map(Some).map_err(|e| {
                Error::invalid(format!("config key `{key}`: bad value {v:?}: {e}"))
            }),
        }
    }

    /// Typed read of a comma-separated list.
    pub fn get_list<T>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        check_key(key)?;
        let Some(raw) = self.values.get(key) else {
            return Ok(None);
        };
        raw.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<T>().map_err(|e| {
                    Error::invalid(format!("config key `{key}`: bad element {s:?}: {e}"))
                })
            })
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }

    /// Builds a scenario configuration: defaults for the requested scenario
    /// and attribute, overlaid with every key this config sets.
    pub fn scenario_config(&self) -> Result<ScenarioConfig> {
        let scenario: u8 = self
            .get_parsed("scenario")?
            .ok_or_else(|| Error::missing("config key", "scenario"))?;
        let attribute: String = self
            .get_parsed("attribute")?
            .ok_or_else(|| Error::missing("config key", "attribute"))?;
        let mut cfg = ScenarioConfig::new(scenario, attribute);
        self.overlay(&mut cfg)?;
        Ok(cfg)
    }

    /// Applies every present key onto `cfg` in place (the precedence
    /// work-horse: call once with file values, again after flag overrides).
    pub fn overlay(&self, cfg: &mut ScenarioConfig) -> Result<()> {
        macro_rules! read {
            ($key:literal => $slot:expr) => {
                if let Some(v) = self.get_parsed($key)? {
                    $slot = v;
                }
            };
        }
        read!("dataset.name" => cfg.dataset_name);
        read!("scenario" => cfg.scenario);
        read!("attribute" => cfg.attribute);
        read!("alpha" => cfg.alpha);
        read!("beta" => cfg.beta);
        read!("method" => cfg.method);
        read!("k" => cfg.k);
        read!("k2" => cfg.k2);
        read!("original" => cfg.original_kind);
        if let Some(kinds) = self.get_list("candidates")? {
            cfg.candidate_kinds = kinds;
        }
        read!("aggregation" => cfg.aggregation);
        if let Some(path) = self.get("embedding.file") {
            cfg.embedding = EmbeddingSource::File(PathBuf::from(path));
        } else if let Some(dim) = self.get_parsed("embedding.dim")? {
            cfg.embedding = EmbeddingSource::Hash { dim };
        }
        read!("split.train" => cfg.split.0);
        read!("split.validation" => cfg.split.1);
        read!("split.test" => cfg.split.2);
        read!("train.dim" => cfg.train.dim);
        read!("train.learning_rate" => cfg.train.learning_rate);
        read!("train.batch_size" => cfg.train.batch_size);
        read!("train.max_epochs" => cfg.train.max_epochs);
        read!("train.patience" => cfg.train.patience);
        read!("train.eval_every" => cfg.train.eval_every);
        read!("train.eval_k" => cfg.train.eval_k);
        read!("train.negatives" => cfg.train.negatives_per_positive);
        read!("train.layers" => cfg.train.layers);
        read!("train.l2_reg" => cfg.train.l2_reg);
        read!("classifier.hidden" => cfg.classifier.hidden);
        read!("classifier.learning_rate" => cfg.classifier.learning_rate);
        read!("classifier.batch_size" => cfg.classifier.batch_size);
        read!("classifier.max_epochs" => cfg.classifier.max_epochs);
        read!("classifier.patience" => cfg.classifier.patience);
        read!("classifier.eval_every" => cfg.classifier.eval_every);
        read!("classifier.val_frac" => cfg.classifier.val_frac);
        read!("classifier.max_depth" => cfg.classifier.max_depth);
        read!("classifier.knn_k" => cfg.classifier.knn_k);
        read!("align.kind" => cfg.align.kind);
        read!("align.learning_rate" => cfg.align.learning_rate);
        read!("align.epochs" => cfg.align.epochs);
        read!("align.holdout_frac" => cfg.align.holdout_frac);
        if let Some(f) = self.get_parsed("robustness.fraction")? {
            cfg.robustness = Some(f);
        }
        read!("seed" => cfg.seed);
        Ok(())
    }

    /// Recommender knobs alone, for stages that train without a scenario.
    pub fn train_config(&self) -> Result<crate::rec::TrainConfig> {
        let mut t = crate::rec::TrainConfig::default();
        macro_rules! read {
            ($key:literal => $slot:expr) => {
                if let Some(v) = self.get_parsed($key)? {
                    $slot = v;
                }
            };
        }
        read!("train.dim" => t.dim);
        read!("train.learning_rate" => t.learning_rate);
        read!("train.batch_size" => t.batch_size);
        read!("train.max_epochs" => t.max_epochs);
        read!("train.patience" => t.patience);
        read!("train.eval_every" => t.eval_every);
        read!("train.eval_k" => t.eval_k);
        read!("train.negatives" => t.negatives_per_positive);
        read!("train.layers" => t.layers);
        read!("train.l2_reg" => t.l2_reg);
        read!("seed" => t.seed);
        Ok(t)
    }

    /// Alignment knobs alone, for the standalone align stage.
    pub fn align_config(&self) -> Result<crate::augment::AlignConfig> {
        let mut a = crate::augment::AlignConfig::default();
        macro_rules! read {
            ($key:literal => $slot:expr) => {
                if let Some(v) = self.get_parsed($key)? {
                    $slot = v;
                }
            };
        }
        read!("align.kind" => a.kind);
        read!("align.learning_rate" => a.learning_rate);
        read!("align.epochs" => a.epochs);
        read!("align.holdout_frac" => a.holdout_frac);
        read!("seed" => a.seed);
        Ok(a)
    }

    /// Builds a sweep grid around `base`; absent grid keys fall back to the
    /// base scenario's own values.
    pub fn sweep_spec(&self, base: ScenarioConfig) -> Result<SweepSpec> {
        let mut spec = SweepSpec::new(base, vec![], vec![]);
        spec.alphas = self
            .get_list("sweep.alphas")?
            .unwrap_or_else(|| vec![spec.base.alpha]);
        spec.betas = self
            .get_list("sweep.betas")?
            .unwrap_or_else(|| vec![spec.base.beta]);
        if let Some(methods) = self.get_list("sweep.methods")? {
            spec.methods = methods;
        }
        if let Some(seeds) = self.get_list("sweep.seeds")? {
            spec.seeds = seeds;
        }
        if spec.alphas.is_empty() || spec.betas.is_empty() || spec.seeds.is_empty() {
            return Err(Error::invalid("sweep grids must be nonempty"));
        }
        Ok(spec)
    }
}
