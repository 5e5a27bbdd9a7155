//! Core dataset model: users, items, interactions, attribute columns,
//! interaction splits, and provider partitions.
//!
//! External string ids are interned to dense `u32` indices at build time;
//! everything downstream works on indices.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::SeedPolicy;

/// One (user, item) feedback event. Weights are nonnegative; explicit ratings
/// are kept as-is and binarized by the trainers that need implicit feedback.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub user: u32,
    pub item: u32,
    pub weight: f64,
    pub timestamp: i64,
}

/// Title and category text attached to an item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemMeta {
    pub title: String,
    pub category: String,
}

/// One categorical attribute over all users, with labels interned to codes.
/// Label codes are assigned in sorted label order so they do not depend on
/// file row order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeColumn {
    name: String,
    labels: Vec<String>,
    /// Per user index: label code, or None when the user did not declare it.
    values: Vec<Option<u32>>,
}

impl AttributeColumn {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label_count(&self) -> usize {
        self.labels.len()
    }

    pub fn value(&self, user: u32) -> Option<u32> {
        self.values.get(user as usize).copied().flatten()
    }

    pub fn label_of(&self, code: u32) -> &str {
        &self.labels[code as usize]
    }
}

/// Immutable in-memory dataset. Constructed through [`DatasetBuilder`];
/// interactions are deduplicated per (user, item) pair keeping the maximum
/// weight.
#[derive(Debug, Clone)]
pub struct Dataset {
    user_ids: Vec<String>,
    item_ids: Vec<String>,
    user_index: HashMap<String, u32>,
    item_index: HashMap<String, u32>,
    interactions: Vec<Interaction>,
    attributes: Vec<AttributeColumn>,
    item_meta: Vec<Option<ItemMeta>>,
}

impl Dataset {
    pub fn n_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn interactions(&self) -> &[Interaction] {
        &self.interactions
    }

    pub fn user_id(&self, u: u32) -> &str {
        &self.user_ids[u as usize]
    }

    pub fn item_id(&self, i: u32) -> &str {
        &self.item_ids[i as usize]
    }

    pub fn user_idx(&self, id: &str) -> Option<u32> {
        self.user_index.get(id).copied()
    }

    pub fn item_idx(&self, id: &str) -> Option<u32> {
        self.item_index.get(id).copied()
    }

    pub fn attributes(&self) -> &[AttributeColumn] {
        &self.attributes
    }

    pub fn attribute(&self, name: &str) -> Option<&AttributeColumn> {
        self.attributes.iter().find(|a| a.name == name)
    }

    pub fn item_meta(&self, i: u32) -> Option<&ItemMeta> {
        self.item_meta.get(i as usize).and_then(|m| m.as_ref())
    }

    /// Per-user interacted item lists over all interactions, each sorted
    /// ascending by item index.
    pub fn user_items(&self) -> Vec<Vec<u32>> {
        self.user_items_from((0..self.interactions.len()).collect::<Vec<_>>().as_slice())
    }

    /// Per-user interacted item lists restricted to the given interaction
    /// indices (e.g. a split's train set), sorted ascending.
    pub fn user_items_from(&self, idxs: &[usize]) -> Vec<Vec<u32>> {
        let mut per_user = vec![Vec::new(); self.n_users()];
        for &ix in idxs {
            let it = self.interactions[ix];
            per_user[it.user as usize].push(it.item);
        }
        for v in &mut per_user {
            v.sort_unstable();
        }
        per_user
    }
}

/// Accumulates rows from any source, interning ids and enforcing the dataset
/// invariants at build time.
#[derive(Debug, Default)]
pub struct DatasetBuilder {
    user_ids: Vec<String>,
    item_ids: Vec<String>,
    user_index: HashMap<String, u32>,
    item_index: HashMap<String, u32>,
    interactions: Vec<Interaction>,
    /// (user, item) -> index into `interactions`, for dedup.
    pair_index: HashMap<(u32, u32), usize>,
    /// attribute name -> per-user raw label text.
    attributes: Vec<(String, HashMap<u32, String>)>,
    item_meta: HashMap<u32, ItemMeta>,
}

impl DatasetBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern_user(&mut self, id: &str) -> u32 {
        if let Some(&u) = self.user_index.get(id) {
            return u;
        }
        let u = self.user_ids.len() as u32;
        self.user_ids.push(id.to_string());
        self.user_index.insert(id.to_string(), u);
        u
    }

    pub fn intern_item(&mut self, id: &str) -> u32 {
        if let Some(&i) = self.item_index.get(id) {
            return i;
        }
        let i = self.item_ids.len() as u32;
        self.item_ids.push(id.to_string());
        self.item_index.insert(id.to_string(), i);
        i
    }

    /// Adds one feedback row. Duplicate (user, item) pairs collapse to the
    /// row with the larger weight; ties keep the earlier row.
    pub fn add_interaction(
        &mut self,
        user: &str,
        item: &str,
        weight: f64,
        timestamp: i64,
    ) -> Result<()> {
        if !(weight >= 0.0) {
            return Err(Error::invalid(format!(
                "interaction weight must be nonnegative, got {weight}"
            )));
        }
        let u = self.intern_user(user);
        let i = self.intern_item(item);
        let inter = Interaction {
            user: u,
            item: i,
            weight,
            timestamp,
        };
        match self.pair_index.get(&(u, i)) {
            Some(&ix) => {
                if weight > self.interactions[ix].weight {
                    self.interactions[ix] = inter;
                }
            }
            None => {
                self.pair_index.insert((u, i), self.interactions.len());
                self.interactions.push(inter);
            }
        }
        Ok(())
    }

    /// Declares one attribute value. Re-declaring the same value is a no-op;
    /// a different value for the same (user, attribute) is an error.
    pub fn set_attribute(&mut self, user: &str, attribute: &str, value: &str) -> Result<()> {
        let u = self.intern_user(user);
        let col = match self.attributes.iter_mut().find(|(n, _)| n == attribute) {
            Some((_, m)) => m,
            None => {
                self.attributes
                    .push((attribute.to_string(), HashMap::new()));
                &mut self.attributes.last_mut().unwrap().1
            }
        };
        match col.get(&u) {
            Some(prev) if prev != value => Err(Error::invalid(format!(
                "conflicting values for user {user} attribute {attribute}: {prev} vs {value}"
            ))),
            Some(_) => Ok(()),
            None => {
                col.insert(u, value.to_string());
                Ok(())
            }
        }
    }

    /// Attaches title/category text to an item; the last declaration wins.
    pub fn set_item_meta(&mut self, item: &str, title: &str, category: &str) {
        let i = self.intern_item(item);
        self.item_meta.insert(
            i,
            ItemMeta {
                title: title.to_string(),
                category: category.to_string(),
            },
        );
    }

    pub fn build(self) -> Dataset {
        let n_users = self.user_ids.len();
        let attributes = self
            .attributes
            .into_iter()
            .map(|(name, raw)| {
                let mut labels: Vec<String> = raw.values().cloned().collect();
                labels.sort();
                labels.dedup();
                let code: HashMap<&str, u32> = labels
                    .iter()
                    .enumerate()
                    .map(|(c, l)| (l.as_str(), c as u32))
                    .collect();
                let mut values = vec![None; n_users];
                for (u, v) in raw.iter() {
                    values[*u as usize] = Some(code[v.as_str()]);
                }
                AttributeColumn {
                    name,
                    labels,
                    values,
                }
            })
            .collect();
        let mut item_meta = vec![None; self.item_ids.len()];
        for (i, m) in self.item_meta {
            item_meta[i as usize] = Some(m);
        }
        Dataset {
            user_ids: self.user_ids,
            item_ids: self.item_ids,
            user_index: self.user_index,
            item_index: self.item_index,
            interactions: self.interactions,
            attributes,
            item_meta,
        }
    }
}

/// Disjoint interaction-index sets covering the whole dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Floor with a tiny guard so exact products like 0.8 * 10 do not land on
/// the wrong side of an ulp.
pub(crate) fn floor_frac(frac: f64, n: usize) -> usize {
    ((frac * n as f64) + 1e-9).floor() as usize
}

/// Uniform per-interaction split into train/validation/test. Sizes are
/// `⌊r_train·n⌋` and `⌊r_val·n⌋` with the remainder in test, so each part is
/// within one interaction of its configured share.
pub fn split_dataset(dataset: &Dataset, ratios: (f64, f64, f64), seed: u64) -> Result<Split> {
    let (r_train, r_val, r_test) = ratios;
    if dataset.interactions().is_empty() {
        return Err(Error::Dataset("cannot split an empty dataset".into()));
    }
    if r_train < 0.0 || r_val < 0.0 || r_test < 0.0 {
        return Err(Error::invalid("split ratios must be nonnegative"));
    }
    if (r_train + r_val + r_test - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "split ratios must sum to 1, got {}",
            r_train + r_val + r_test
        )));
    }
    let n = dataset.interactions().len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut SeedPolicy::new(seed).rng("split"));
    let n_train = floor_frac(r_train, n);
    let n_val = floor_frac(r_val, n);
    let mut train: Vec<usize> = order[..n_train].to_vec();
    let mut validation: Vec<usize> = order[n_train..n_train + n_val].to_vec();
    let mut test: Vec<usize> = order[n_train + n_val..].to_vec();
    train.sort_unstable();
    validation.sort_unstable();
    test.sort_unstable();
    Ok(Split {
        train,
        validation,
        test,
    })
}

/// Which users release interaction histories, which release attribute labels,
/// and which are evaluation targets. Sets are sorted user-index vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderPartition {
    pub alpha: f64,
    pub beta: f64,
    pub interaction_providers: Vec<u32>,
    pub attribute_providers: Vec<u32>,
    pub target_users: Vec<u32>,
}

impl ProviderPartition {
    pub fn is_interaction_provider(&self, u: u32) -> bool {
        self.interaction_providers.binary_search(&u).is_ok()
    }

    pub fn is_attribute_provider(&self, u: u32) -> bool {
        self.attribute_providers.binary_search(&u).is_ok()
    }
}

/// Draws `⌊α·M⌋` interaction providers and `⌊β·M⌋` attribute providers as two
/// independent uniform samples; target users are everyone not providing
/// attributes.
pub fn partition_providers(
    dataset: &Dataset,
    alpha: f64,
    beta: f64,
    seed: u64,
) -> Result<ProviderPartition> {
    for (name, v) in [("alpha", alpha), ("beta", beta)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::invalid(format!("{name} must lie in [0,1], got {v}")));
        }
    }
    let m = dataset.n_users();
    let policy = SeedPolicy::new(seed);
    let sample = |stage: &str, frac: f64| -> Vec<u32> {
        let mut order: Vec<u32> = (0..m as u32).collect();
        order.shuffle(&mut policy.rng(stage));
        let mut picked = order[..floor_frac(frac, m)].to_vec();
        picked.sort_unstable();
        picked
    };
    let interaction_providers = sample("partition.interaction", alpha);
    let attribute_providers = sample("partition.attribute", beta);
    let target_users = (0..m as u32)
        .filter(|u| attribute_providers.binary_search(u).is_err())
        .collect();
    Ok(ProviderPartition {
        alpha,
        beta,
        interaction_providers,
        attribute_providers,
        target_users,
    })
}

/// Splits the item universe by whether any interaction provider touched the
/// item: returns (provider-touched items, the complement), both sorted.
pub fn derive_item_partition(dataset: &Dataset, partition: &ProviderPartition) -> (Vec<u32>, Vec<u32>) {
    let mut touched = vec![false; dataset.n_items()];
    for it in dataset.interactions() {
        if partition.is_interaction_provider(it.user) {
            touched[it.item as usize] = true;
        }
    }
    let v_l: Vec<u32> = (0..dataset.n_items() as u32)
        .filter(|&i| touched[i as usize])
        .collect();
    let v_v: Vec<u32> = (0..dataset.n_items() as u32)
        .filter(|&i| !touched[i as usize])
        .collect();
    (v_l, v_v)
}
