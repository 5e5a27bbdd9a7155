//! Surrogate-model confirmation: train candidate recommenders on the
//! released interaction histories, compare each candidate's top-K lists to
//! the observed lists, and keep the most similar candidate.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::rec::{train_recommender, RecKind, RecommenderModel, TrainConfig};

/// Top-K recommendation lists for a set of users.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecListSet {
    k: usize,
    lists: HashMap<u32, Vec<u32>>,
}

impl RecListSet {
    pub fn new(k: usize) -> Self {
        RecListSet {
            k,
            lists: HashMap::new(),
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.lists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lists.is_empty()
    }

    pub fn insert(&mut self, user: u32, list: Vec<u32>) -> Result<()> {
        if list.len() != self.k {
            return Err(Error::invalid(format!(
                "list for user {user} has {} items, expected {}",
                list.len(),
                self.k
            )));
        }
        if list.iter().collect::<HashSet<_>>().len() != self.k {
            return Err(Error::invalid(format!(
                "list for user {user} contains duplicate items"
            )));
        }
        self.lists.insert(user, list);
        Ok(())
    }

    pub fn get(&self, user: u32) -> Option<&[u32]> {
        self.lists.get(&user).map(|v| v.as_slice())
    }

    /// Users present in the set, sorted.
    pub fn users(&self) -> Vec<u32> {
        let mut u: Vec<u32> = self.lists.keys().copied().collect();
        u.sort_unstable();
        u
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &[u32])> {
        self.lists.iter().map(|(&u, l)| (u, l.as_slice()))
    }

    /// Generates top-K lists from a model for the given users, excluding each
    /// user's items in `exclude` (indexed by user).
    pub fn from_model(
        model: &RecommenderModel,
        users: &[u32],
        k: usize,
        exclude: &[Vec<u32>],
    ) -> Result<Self> {
        let mut set = RecListSet::new(k);
        for &u in users {
            let ex: &[u32] = exclude
                .get(u as usize)
                .map(|v| v.as_slice())
                .unwrap_or(&[]);
            set.insert(u, model.recommend_topk(u, k, ex)?)?;
        }
        Ok(set)
    }
}

/// Mean over `users` of |z ∩ ẑ| / K: the fraction of each observed list the
/// candidate reproduces, order-insensitive.
pub fn compute_rls(original: &RecListSet, candidate: &RecListSet, users: &[u32]) -> Result<f64> {
    if original.k() != candidate.k() {
        return Err(Error::invalid(format!(
            "list length mismatch: {} vs {}",
            original.k(),
            candidate.k()
        )));
    }
    if users.is_empty() {
        return Err(Error::invalid("rls needs at least one user"));
    }
    let k = original.k() as f64;
    let mut total = 0.0;
    for &u in users {
        let z = original
            .get(u)
            .ok_or_else(|| Error::missing("original list", format!("user {u}")))?;
        let zh = candidate
            .get(u)
            .ok_or_else(|| Error::missing("candidate list", format!("user {u}")))?;
        let zset: HashSet<u32> = z.iter().copied().collect();
        let overlap = zh.iter().filter(|i| zset.contains(i)).count();
        total += overlap as f64 / k;
    }
    Ok(total / users.len() as f64)
}

/// Outcome of the candidate tournament.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateReport {
    /// (kind, rls) for every candidate that trained successfully, in the
    /// order candidates were given.
    pub rls: Vec<(RecKind, f64)>,
    /// Candidates that failed to train, with the failure text.
    pub failed: Vec<(RecKind, String)>,
    pub chosen: RecKind,
    pub k: usize,
}

/// Fixed preference order used to break rls ties.
const TIE_ORDER: [RecKind; 4] = [RecKind::Mf, RecKind::NeuMf, RecKind::Ngcf, RecKind::LightGcn];

fn tie_rank(kind: RecKind) -> usize {
    TIE_ORDER.iter().position(|&k| k == kind).unwrap_or(usize::MAX)
}

/// Trains every candidate on the interaction providers' data only, scores
/// each by rls against the observed lists over the provider users, and
/// returns the report plus the winning trained model. Candidates whose
/// training fails are recorded and skipped; if all fail, an error.
pub fn confirm_surrogate(
    dataset: &Dataset,
    split: &Split,
    providers: &[u32],
    candidates: &[(RecKind, TrainConfig)],
    original_lists: &RecListSet,
) -> Result<(SurrogateReport, RecommenderModel)> {
    if candidates.is_empty() {
        return Err(Error::invalid("no surrogate candidates given"));
    }
    if providers.is_empty() {
        return Err(Error::invalid(
            "surrogate confirmation needs interaction providers",
        ));
    }
    let provider_set: HashSet<u32> = providers.iter().copied().collect();
    let keep = |ixs: &[usize]| -> Vec<usize> {
        ixs.iter()
            .copied()
            .filter(|&ix| provider_set.contains(&dataset.interactions()[ix].user))
            .collect()
    };
    let provider_split = Split {
        train: keep(&split.train),
        validation: keep(&split.validation),
        test: keep(&split.test),
    };
    let exclude = dataset.user_items_from(&provider_split.train);
    let k = original_lists.k();

    let mut rls_scores: Vec<(RecKind, f64)> = Vec::new();
    let mut failed: Vec<(RecKind, String)> = Vec::new();
    let mut best: Option<(RecKind, f64, RecommenderModel)> = None;
    for (kind, cfg) in candidates {
        let outcome = train_recommender(dataset, &provider_split, cfg, *kind)
            .and_then(|model| {
                let lists = RecListSet::from_model(&model, providers, k, &exclude)?;
                let rls = compute_rls(original_lists, &lists, providers)?;
                Ok((model, rls))
            });
        match outcome {
            Ok((model, rls)) => {
                rls_scores.push((*kind, rls));
                let better = match &best {
                    None => true,
                    Some((bk, br, _)) => {
                        rls > *br || (rls == *br && tie_rank(*kind) < tie_rank(*bk))
                    }
                };
                if better {
                    best = Some((*kind, rls, model));
                }
            }
            Err(e) => failed.push((*kind, e.to_string())),
        }
    }
    let (chosen, _, model) = best.ok_or_else(|| {
        Error::Train(format!(
            "every surrogate candidate failed to train: {failed:?}"
        ))
    })?;
    Ok((
        SurrogateReport {
            rls: rls_scores,
            failed,
            chosen,
            k,
        },
        model,
    ))
}

/// Writes the report as a tab-separated table: kind, rls, chosen flag.
/// Failed candidates appear with "failed" in the rls column.
pub fn write_report(path: &Path, report: &SurrogateReport) -> Result<()> {
    let mut out = String::from("kind\trls\tchosen\n");
    for (kind, rls) in &report.rls {
        out.push_str(&format!(
            "{kind}\t{rls}\t{}\n",
            if *kind == report.chosen { 1 } else { 0 }
        ));
    }
    for (kind, _) in &report.failed {
        out.push_str(&format!("{kind}\tfailed\t0\n"));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::split_dataset;
    use crate::ingest::{generate_synthetic, SyntheticSpec};
    use proptest::prelude::*;

    fn set_of(k: usize, lists: &[(u32, Vec<u32>)]) -> RecListSet {
        let mut s = RecListSet::new(k);
        for (u, l) in lists {
            s.insert(*u, l.clone()).unwrap();
        }
        s
    }

    #[test]
    fn identical_sets_score_one() {
        let s = set_of(3, &[(0, vec![1, 2, 3]), (1, vec![4, 5, 6])]);
        assert_eq!(compute_rls(&s, &s, &[0, 1]).unwrap(), 1.0);
    }

    #[test]
    fn disjoint_sets_score_zero() {
        let a = set_of(2, &[(0, vec![1, 2])]);
        let b = set_of(2, &[(0, vec![3, 4])]);
        assert_eq!(compute_rls(&a, &b, &[0]).unwrap(), 0.0);
    }

    #[test]
    fn mixed_overlaps_average() {
        // user 0 overlaps 10 of 20, user 1 overlaps 20 of 20 → (0.5 + 1) / 2
        let full: Vec<u32> = (0..20).collect();
        let half: Vec<u32> = (0..10).chain(100..110).collect();
        let a = set_of(20, &[(0, full.clone()), (1, full.clone())]);
        let b = set_of(20, &[(0, half), (1, full)]);
        assert_eq!(compute_rls(&a, &b, &[0, 1]).unwrap(), 0.75);
    }

    #[test]
    fn rls_rejects_mismatches() {
        let a = set_of(2, &[(0, vec![1, 2])]);
        let b = set_of(3, &[(0, vec![1, 2, 3])]);
        assert!(compute_rls(&a, &b, &[0]).is_err());
        let c = set_of(2, &[(1, vec![1, 2])]);
        assert!(compute_rls(&a, &c, &[0]).is_err());
    }

    #[test]
    fn list_validation_rejects_bad_lists() {
        let mut s = RecListSet::new(3);
        assert!(s.insert(0, vec![1, 2]).is_err());
        assert!(s.insert(0, vec![1, 2, 2]).is_err());
        assert!(s.insert(0, vec![1, 2, 3]).is_ok());
    }

    fn planted() -> (crate::ingest::Synthetic, Split) {
        let spec = SyntheticSpec {
            n_users: 50,
            n_items: 40,
            n_clusters: 2,
            attribute_name: "cluster".into(),
            cluster_affinity: 0.95,
            interactions_per_user: 12,
        };
        let s = generate_synthetic(&spec, 31).unwrap();
        let split = split_dataset(&s.dataset, (0.8, 0.1, 0.1), 31).unwrap();
        (s, split)
    }

    fn quick_cfg(seed: u64) -> TrainConfig {
        TrainConfig {
            dim: 8,
            learning_rate: 0.05,
            batch_size: 128,
            max_epochs: 20,
            eval_every: 5,
            patience: 2,
            seed,
            ..TrainConfig::default()
        }
    }

    fn original_lists(
        s: &crate::ingest::Synthetic,
        split: &Split,
        users: &[u32],
        k: usize,
    ) -> RecListSet {
        let model =
            train_recommender(&s.dataset, split, &quick_cfg(99), RecKind::LightGcn).unwrap();
        let exclude = s.dataset.user_items_from(&split.train);
        RecListSet::from_model(&model, users, k, &exclude).unwrap()
    }

    #[test]
    fn singleton_tournament_picks_the_only_candidate() {
        let (s, split) = planted();
        let users: Vec<u32> = (0..s.dataset.n_users() as u32).collect();
        let lists = original_lists(&s, &split, &users, 10);
        let (report, model) = confirm_surrogate(
            &s.dataset,
            &split,
            &users,
            &[(RecKind::NeuMf, quick_cfg(1))],
            &lists,
        )
        .unwrap();
        assert_eq!(report.chosen, RecKind::NeuMf);
        assert_eq!(model.kind(), RecKind::NeuMf);
        assert_eq!(report.rls.len(), 1);
    }

    #[test]
    fn tournament_chooses_the_max_rls_candidate() {
        let (s, split) = planted();
        let users: Vec<u32> = (0..s.dataset.n_users() as u32).collect();
        let lists = original_lists(&s, &split, &users, 10);
        let candidates = vec![
            (RecKind::Mf, quick_cfg(2)),
            (RecKind::NeuMf, quick_cfg(2)),
            (RecKind::Ngcf, quick_cfg(2)),
        ];
        let (report, model) =
            confirm_surrogate(&s.dataset, &split, &users, &candidates, &lists).unwrap();
        assert_eq!(report.rls.len(), 3);
        for (_, rls) in &report.rls {
            assert!((0.0..=1.0).contains(rls), "rls {rls}");
        }
        let max = report
            .rls
            .iter()
            .map(|(_, r)| *r)
            .fold(f64::NEG_INFINITY, f64::max);
        let chosen_rls = report
            .rls
            .iter()
            .find(|(k, _)| *k == report.chosen)
            .unwrap()
            .1;
        assert_eq!(chosen_rls, max);
        assert_eq!(model.kind(), report.chosen);
        assert!(report.failed.is_empty());
    }

    #[test]
    fn empty_candidate_list_is_an_error() {
        let (s, split) = planted();
        let users: Vec<u32> = (0..4).collect();
        let lists = original_lists(&s, &split, &users, 5);
        assert!(confirm_surrogate(&s.dataset, &split, &users, &[], &lists).is_err());
    }

    #[test]
    fn report_file_lists_every_candidate() {
        let report = SurrogateReport {
            rls: vec![(RecKind::Mf, 0.625), (RecKind::Ngcf, 0.5)],
            failed: vec![(RecKind::NeuMf, "diverged".into())],
            chosen: RecKind::Mf,
            k: 20,
        };
        let f = tempfile::NamedTempFile::new().unwrap();
        write_report(f.path(), &report).unwrap();
        let text = std::fs::read_to_string(f.path()).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.contains("mf\t0.625\t1"));
        assert!(text.contains("ngcf\t0.5\t0"));
        assert!(text.contains("neumf\tfailed\t0"));
    }

    proptest! {
        #[test]
        fn rls_stays_in_unit_interval(
            k in 1usize..8,
            n_users in 1usize..6,
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let universe: Vec<u32> = (0..30).collect();
            let draw = |rng: &mut rand_chacha::ChaCha8Rng| {
                let mut pool = universe.clone();
                pool.shuffle(rng);
                pool.truncate(k);
                pool
            };
            let mut a = RecListSet::new(k);
            let mut b = RecListSet::new(k);
            for u in 0..n_users as u32 {
                a.insert(u, draw(&mut rng)).unwrap();
                b.insert(u, draw(&mut rng)).unwrap();
            }
            let users: Vec<u32> = (0..n_users as u32).collect();
            let rls = compute_rls(&a, &b, &users).unwrap();
            prop_assert!((0.0..=1.0).contains(&rls));
            prop_assert_eq!(compute_rls(&a, &a, &users).unwrap(), 1.0);

            // order-insensitive: reverse every candidate list
            let mut rev = RecListSet::new(k);
            for (u, l) in b.iter() {
                let mut r = l.to_vec();
                r.reverse();
                rev.insert(u, r).unwrap();
            }
            prop_assert_eq!(compute_rls(&a, &rev, &users).unwrap(), rls);

            // appending one shared fresh item to both sides never lowers rls
            let mut a2 = RecListSet::new(k + 1);
            let mut b2 = RecListSet::new(k + 1);
            for (u, l) in a.iter() {
                let mut e = l.to_vec();
                e.push(1000 + u);
                a2.insert(u, e).unwrap();
            }
            for (u, l) in b.iter() {
                let mut e = l.to_vec();
                e.push(1000 + u);
                b2.insert(u, e).unwrap();
            }
            let rls2 = compute_rls(&a2, &b2, &users).unwrap();
            prop_assert!(rls2 >= rls - 1e-12);
        }
    }
}
