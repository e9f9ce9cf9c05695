//! Filtered top-k ranking, Recall@k and nDCG@k.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::dataset::{InteractionDataset, INTERACTS_WITH};
use crate::error::{Error, Result};
use crate::model::EmbeddingModel;
use crate::train::Validator;

/// Environment variable capping evaluation worker threads.
pub const THREADS_ENV: &str = "KGREC_THREADS";

/// Cutoff used for validation during training.
pub const VALIDATION_K: usize = 20;

/// Anything that can score every item for a user.
pub trait Scorer: Sync {
    fn num_items(&self) -> usize;
    /// Writes the score of item `i` to `out[i]`; `out.len() == num_items()`.
    fn score_items(&self, user: usize, out: &mut [f64]) -> Result<()>;
}

/// Ranks items for user `u` by `<u, interactsWith, item>` scores.
#[derive(Clone, Copy, Debug)]
pub struct ModelScorer<'a> {
    model: &'a EmbeddingModel,
    num_users: usize,
    num_items: usize,
}

impl<'a> ModelScorer<'a> {
    pub fn new(model: &'a EmbeddingModel, num_users: usize, num_items: usize) -> Result<Self> {
        if model.num_entities() != num_users + num_items {
            return Err(Error::InvalidArgument(format!(
                "model has {} entities but the dataset has {} users and {} items",
                model.num_entities(),
                num_users,
                num_items
            )));
        }
        Ok(ModelScorer {
            model,
            num_users,
            num_items,
        })
    }
}

impl Scorer for ModelScorer<'_> {
    fn num_items(&self) -> usize {
        self.num_items
    }

    fn score_items(&self, user: usize, out: &mut [f64]) -> Result<()> {
        if user >= self.num_users {
            return Err(Error::OutOfRange {
                what: "user",
                id: user,
                limit: self.num_users,
            });
        }
        let items = self.num_users..self.num_users + self.num_items;
        self.model
            .score_candidates_into(user, INTERACTS_WITH, items, out)
    }
}

/// Which positives are removed from the ranking and which are the targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Filter {
    /// Remove train positives, target validation positives.
    TrainOnly,
    /// Remove train and validation positives, target test positives.
    TrainValid,
}

impl Filter {
    pub fn excluded(self, dataset: &InteractionDataset, user: usize) -> Vec<&[usize]> {
        match self {
            Filter::TrainOnly => vec![&dataset.train_pos[user]],
            Filter::TrainValid => vec![&dataset.train_pos[user], &dataset.valid_pos[user]],
        }
    }

    pub fn targets(self, dataset: &InteractionDataset, user: usize) -> &[usize] {
        match self {
            Filter::TrainOnly => &dataset.valid_pos[user],
            Filter::TrainValid => &dataset.test_pos[user],
        }
    }
}

impl fmt::Display for Filter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Filter::TrainOnly => "train",
            Filter::TrainValid => "train+valid",
        })
    }
}

impl FromStr for Filter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Filter::TrainOnly),
            "train+valid" => Ok(Filter::TrainValid),
            _ => Err(Error::InvalidArgument(format!(
                "unknown filter {s:?}; use train or train+valid"
            ))),
        }
    }
}

/// Descending score, then ascending id. NaN sorts last.
fn rank_order(a: (usize, f64), b: (usize, f64)) -> Ordering {
    let key = |x: f64| if x.is_nan() { f64::NEG_INFINITY } else { x };
    key(b.1).total_cmp(&key(a.1)).then(a.0.cmp(&b.0))
}

/// The `k` best items by `scores` among those not in any `excluded` list.
pub fn top_k_filtered(scores: &[f64], excluded: &[&[usize]], k: usize) -> Vec<usize> {
    let mut keep = vec![true; scores.len()];
    for list in excluded {
        for &i in *list {
            if let Some(slot) = keep.get_mut(i) {
                *slot = false;
            }
        }
    }
    let mut cands: Vec<(usize, f64)> = scores
        .iter()
        .enumerate()
        .filter(|&(i, _)| keep[i])
        .map(|(i, &s)| (i, s))
        .collect();
    if k < cands.len() {
        cands.select_nth_unstable_by(k - 1, |&a, &b| rank_order(a, b));
        cands.truncate(k);
    }
    cands.sort_unstable_by(|&a, &b| rank_order(a, b));
    cands.into_iter().map(|(i, _)| i).collect()
}

/// Top-k item ids for `user` under `filter`.
pub fn rank_topk(
    scorer: &dyn Scorer,
    dataset: &InteractionDataset,
    user: usize,
    k: usize,
    filter: Filter,
) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if user >= dataset.num_users {
        return Err(Error::OutOfRange {
            what: "user",
            id: user,
            limit: dataset.num_users,
        });
    }
    let mut scores = vec![0.0; scorer.num_items()];
    scorer.score_items(user, &mut scores)?;
    Ok(top_k_filtered(&scores, &filter.excluded(dataset, user), k))
}

fn hits<'a>(topk: &'a [usize], targets: &'a [usize]) -> impl Iterator<Item = bool> + 'a {
    topk.iter().map(move |i| targets.binary_search(i).is_ok())
}

/// `|topk ∩ targets| / |targets|`; `targets` sorted and non-empty.
pub fn recall_at_k(topk: &[usize], targets: &[usize]) -> f64 {
    debug_assert!(!targets.is_empty());
    hits(topk, targets).filter(|&h| h).count() as f64 / targets.len() as f64
}

/// Binary-relevance nDCG with a `log2(r + 1)` discount and the ideal DCG
/// truncated at `min(k, |targets|)`.
pub fn ndcg_at_k(topk: &[usize], targets: &[usize], k: usize) -> f64 {
    debug_assert!(!targets.is_empty());
    let discount = |r: usize| 1.0 / ((r + 1) as f64).log2();
    let dcg: f64 = hits(topk, targets)
        .take(k)
        .enumerate()
        .filter(|&(_, h)| h)
        .map(|(idx, _)| discount(idx + 1))
        .sum();
    let idcg: f64 = (1..=k.min(targets.len())).map(discount).sum();
    dcg / idcg
}

#[derive(Clone, Debug, PartialEq)]
pub struct UserResult {
    pub user: usize,
    pub topk: Vec<usize>,
    pub recall: f64,
    pub ndcg: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankingReport {
    pub k: usize,
    pub per_user: Vec<UserResult>,
    pub recall_at_k: f64,
    pub ndcg_at_k: f64,
    pub num_evaluated_users: usize,
}

impl RankingReport {
    pub const TSV_HEADER: &'static str = "model\tdataset\tk\trecall\tndcg\tusers_evaluated";

    pub fn tsv_row(&self, model: &str, dataset: &str) -> String {
        format!(
            "{model}\t{dataset}\t{}\t{:.6}\t{:.6}\t{}",
            self.k, self.recall_at_k, self.ndcg_at_k, self.num_evaluated_users
        )
    }

    /// One line per evaluated user: raw user id, tab, space-separated raw item ids.
    pub fn per_user_tsv(&self, dataset: &InteractionDataset) -> String {
        let mut out = String::new();
        for r in &self.per_user {
            let items: Vec<String> = r
                .topk
                .iter()
                .map(|&i| dataset.item_ids[i].to_string())
                .collect();
            out.push_str(&format!(
                "{}\t{}\n",
                dataset.user_ids[r.user],
                items.join(" ")
            ));
        }
        out
    }
}

fn thread_pool() -> Result<Option<rayon::ThreadPool>> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(None);
    };
    let n: usize = raw.trim().parse().map_err(|_| {
        Error::InvalidArgument(format!(
            "{THREADS_ENV} must be a positive integer, got {raw:?}"
        ))
    })?;
    if n == 0 {
        return Err(Error::InvalidArgument(format!(
            "{THREADS_ENV} must be at least 1"
        )));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map(Some)
        .map_err(|e| Error::InvalidArgument(format!("cannot start evaluation threads: {e}")))
}

/// Ranks every user with at least one target and averages the metrics in
/// ascending user order.
pub fn evaluate(
    scorer: &dyn Scorer,
    dataset: &InteractionDataset,
    k: usize,
    filter: Filter,
) -> Result<RankingReport> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if scorer.num_items() != dataset.num_items {
        return Err(Error::InvalidArgument(
            "scorer and dataset disagree on the number of items".into(),
        ));
    }
    let work = || -> Result<Vec<UserResult>> {
        (0..dataset.num_users)
            .into_par_iter()
            .filter(|&u| !filter.targets(dataset, u).is_empty())
            .map_init(
                || vec![0.0; dataset.num_items],
                |scores, u| {
                    scorer.score_items(u, scores)?;
                    let topk = top_k_filtered(scores, &filter.excluded(dataset, u), k);
                    let targets = filter.targets(dataset, u);
                    Ok(UserResult {
                        user: u,
                        recall: recall_at_k(&topk, targets),
                        ndcg: ndcg_at_k(&topk, targets, k),
                        topk,
                    })
                },
            )
            .collect()
    };
    let per_user = match thread_pool()? {
        Some(pool) => pool.install(work)?,
        None => work()?,
    };
    if per_user.is_empty() {
        return Err(Error::NothingToEvaluate);
    }
    let n = per_user.len() as f64;
    let recall_at_k = per_user.iter().map(|r| r.recall).sum::<f64>() / n;
    let ndcg_at_k = per_user.iter().map(|r| r.ndcg).sum::<f64>() / n;
    Ok(RankingReport {
        k,
        num_evaluated_users: per_user.len(),
        per_user,
        recall_at_k,
        ndcg_at_k,
    })
}

/// Validation Recall@20 of a model, filtering train positives.
#[derive(Clone, Copy, Debug)]
pub struct RecallValidator<'a> {
    pub dataset: &'a InteractionDataset,
    pub k: usize,
}

impl<'a> RecallValidator<'a> {
    pub fn new(dataset: &'a InteractionDataset) -> Self {
        RecallValidator {
            dataset,
            k: VALIDATION_K,
        }
    }
}

impl Validator for RecallValidator<'_> {
    fn has_targets(&self) -> bool {
        self.dataset.valid_pos.iter().any(|v| !v.is_empty())
    }

    fn validate(&self, model: &EmbeddingModel) -> Result<f64> {
        let scorer = ModelScorer::new(model, self.dataset.num_users, self.dataset.num_items)?;
        Ok(evaluate(&scorer, self.dataset, self.k, Filter::TrainOnly)?.recall_at_k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    struct Table(Vec<Vec<f64>>);

    impl Scorer for Table {
        fn num_items(&self) -> usize {
            self.0[0].len()
        }
        fn score_items(&self, user: usize, out: &mut [f64]) -> Result<()> {
            out.copy_from_slice(&self.0[user]);
            Ok(())
        }
    }

    fn dataset(
        train: Vec<Vec<usize>>,
        valid: Vec<Vec<usize>>,
        test: Vec<Vec<usize>>,
        items: usize,
    ) -> InteractionDataset {
        let n = train.len();
        InteractionDataset {
            num_users: n,
            num_items: items,
            user_ids: (0..n as u64).collect(),
            item_ids: (0..items as u64).collect(),
            train_pos: train,
            valid_pos: valid,
            test_pos: test,
            warnings: vec![],
        }
    }

    #[test]
    fn exhausted_candidates_give_short_list() {
        let top = top_k_filtered(&[0.0; 5], &[&[0, 1, 2]], 5);
        assert_eq!(top, vec![3, 4]);
    }

    #[test]
    fn ties_break_by_item_id() {
        assert_eq!(top_k_filtered(&[1.0; 10], &[], 4), vec![0, 1, 2, 3]);
    }

    #[test]
    fn metric_examples() {
        assert_eq!(recall_at_k(&[1, 9, 2], &[1, 2, 3, 4]), 0.5);
        assert_eq!(ndcg_at_k(&[7], &[7], 1), 1.0);
        let v = ndcg_at_k(&[1, 5, 2], &[1, 2], 3);
        assert!((v - 1.5 / (1.0 + 1.0 / 3f64.log2())).abs() < 1e-12);
        assert!((v - 0.9197).abs() < 5e-5);
        assert_eq!(ndcg_at_k(&[5, 6], &[1], 2), 0.0);
    }

    #[test]
    fn evaluate_averages_users_with_targets() {
        let ds = dataset(
            vec![vec![0], vec![1], vec![]],
            vec![vec![], vec![], vec![]],
            vec![vec![1], vec![], vec![0, 2]],
            3,
        );
        let scorer = Table(vec![vec![3.0, 2.0, 1.0], vec![0.0; 3], vec![0.0, 1.0, 2.0]]);
        let r = evaluate(&scorer, &ds, 1, Filter::TrainValid).unwrap();
        assert_eq!(r.num_evaluated_users, 2);
        assert_eq!(r.per_user[0].topk, vec![1]);
        assert_eq!(r.per_user[1].topk, vec![2]);
        assert_eq!(r.recall_at_k, (1.0 + 0.5) / 2.0);
        assert_eq!(r.ndcg_at_k, 1.0);
        assert!(matches!(
            evaluate(&scorer, &ds, 1, Filter::TrainOnly),
            Err(Error::NothingToEvaluate)
        ));
    }

    proptest! {
        #[test]
        fn topk_matches_full_sort(scores in prop::collection::vec(-3i32..3, 1..40), k in 1usize..10, excl in prop::collection::btree_set(0usize..40, 0..10)) {
            let scores: Vec<f64> = scores.into_iter().map(f64::from).collect();
            let excl: Vec<usize> = excl.into_iter().collect();
            let got = top_k_filtered(&scores, &[&excl], k);
            let mut all: Vec<usize> = (0..scores.len()).filter(|i| !excl.contains(i)).collect();
            all.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
            all.truncate(k);
            prop_assert_eq!(got, all);
        }

        #[test]
        fn metrics_in_unit_interval_and_monotone_in_k(
            scores in prop::collection::vec(0.0f64..1.0, 20),
            targets in prop::collection::btree_set(0usize..20, 1..6),
        ) {
            let targets: Vec<usize> = targets.into_iter().collect();
            let full = top_k_filtered(&scores, &[], 20);
            let mut prev_recall = 0.0;
            for k in 1..=20 {
                let top = &full[..k];
                let r = recall_at_k(top, &targets);
                let n = ndcg_at_k(top, &targets, k);
                prop_assert!((0.0..=1.0).contains(&r));
                prop_assert!((0.0..=1.0 + 1e-12).contains(&n));
                prop_assert!(r >= prev_recall);
                prev_recall = r;
            }
        }

        #[test]
        fn monotone_transform_keeps_report(raw in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 6), 4)) {
            let ds = dataset(
                vec![vec![0], vec![], vec![1, 2], vec![]],
                vec![vec![]; 4],
                vec![vec![1, 3], vec![0], vec![4], vec![5]],
                6,
            );
            let a = evaluate(&Table(raw.clone()), &ds, 3, Filter::TrainValid).unwrap();
            let mapped = raw.iter().map(|r| r.iter().map(|x| x.exp() * 2.0 + 1.0).collect()).collect();
            let b = evaluate(&Table(mapped), &ds, 3, Filter::TrainValid).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
