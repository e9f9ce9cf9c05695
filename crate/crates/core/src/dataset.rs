//! Implicit-feedback interaction data and its single-relation triple recast.
//!
//! Users get internal ids `[0, N)` and items `[0, M)` in first-appearance
//! order over the train file followed by the test file. In the triple graph
//! users occupy entity ids `[0, N)` and items `[N, N + M)`.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

/// On-disk layout of an interaction file.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FileFormat {
    /// `user item item ...` per line.
    Adjacency,
    /// `user<TAB>item` per line.
    Pairs,
}

impl std::str::FromStr for FileFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adjacency" => Ok(FileFormat::Adjacency),
            "pairs" => Ok(FileFormat::Pairs),
            other => Err(Error::InvalidArgument(format!(
                "unknown dataset format {other:?}"
            ))),
        }
    }
}

impl fmt::Display for FileFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FileFormat::Adjacency => "adjacency",
            FileFormat::Pairs => "pairs",
        })
    }
}

/// A raw `(user, item)` interaction as it appears in the source file.
pub type RawPair = (u64, u64);

/// Reads interactions in file order. Duplicates are preserved.
pub fn load_interactions(path: &Path, format: FileFormat) -> Result<Vec<RawPair>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_interactions(&text, format, path)
}

pub(crate) fn parse_interactions(
    text: &str,
    format: FileFormat,
    path: &Path,
) -> Result<Vec<RawPair>> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let parse_id = |token: &str, line: usize| -> Result<u64> {
        token
            .parse::<u64>()
            .map_err(|_| parse_err(line, format!("malformed id token {token:?}")))
    };

    let mut pairs = Vec::new();
    let mut saw_content = false;
    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw_line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        saw_content = true;
        match format {
            FileFormat::Adjacency => {
                let mut tokens = line.split_whitespace();
                let user = parse_id(tokens.next().expect("non-empty line"), line_no)?;
                for token in tokens {
                    pairs.push((user, parse_id(token, line_no)?));
                }
            }
            FileFormat::Pairs => {
                let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
                if fields.len() != 2 {
                    return Err(parse_err(
                        line_no,
                        format!(
                            "expected \"user<TAB>item\", found {} field(s)",
                            fields.len()
                        ),
                    ));
                }
                pairs.push((parse_id(fields[0], line_no)?, parse_id(fields[1], line_no)?));
            }
        }
    }
    if !saw_content {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    Ok(pairs)
}

/// Users, items and their train / validation / test positives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionDataset {
    pub num_users: usize,
    pub num_items: usize,
    /// Raw user identifier for each internal id.
    pub user_ids: Vec<u64>,
    /// Raw item identifier for each internal id.
    pub item_ids: Vec<u64>,
    pub train_pos: Vec<Vec<usize>>,
    pub valid_pos: Vec<Vec<usize>>,
    pub test_pos: Vec<Vec<usize>>,
    /// Non-fatal anomalies noticed while building (cold test users, overlaps).
    #[serde(default)]
    pub warnings: Vec<String>,
}

struct IdMap {
    index: HashMap<u64, usize>,
    raw: Vec<u64>,
}

impl IdMap {
    fn new() -> Self {
        IdMap {
            index: HashMap::new(),
            raw: Vec::new(),
        }
    }

    fn intern(&mut self, raw: u64) -> usize {
        let next = self.raw.len();
        *self.index.entry(raw).or_insert_with(|| {
            self.raw.push(raw);
            next
        })
    }
}

/// Number of validation items drawn from a user with `n` train positives.
pub fn holdout_count(n: usize, valid_fraction: f64) -> usize {
    // The epsilon keeps e.g. 0.29 * 100 from flooring to 28.
    ((n as f64) * valid_fraction + 1e-9).floor() as usize
}

/// Builds the dataset: interns ids, collapses duplicates and moves a seeded
/// per-user fraction of the train positives into the validation split.
pub fn build_dataset(
    train_pairs: &[RawPair],
    test_pairs: &[RawPair],
    valid_fraction: f64,
    seed: u64,
) -> Result<InteractionDataset> {
    if train_pairs.is_empty() {
        return Err(Error::InvalidArgument("no training interactions".into()));
    }
    if !(0.0..1.0).contains(&valid_fraction) {
        return Err(Error::InvalidArgument(format!(
            "valid_fraction must lie in [0, 1), got {valid_fraction}"
        )));
    }

    let mut users = IdMap::new();
    let mut items = IdMap::new();
    let mut train: Vec<BTreeSet<usize>> = Vec::new();
    for &(u, i) in train_pairs {
        let (u, i) = (users.intern(u), items.intern(i));
        if u == train.len() {
            train.push(BTreeSet::new());
        }
        train[u].insert(i);
    }
    let train_items = items.raw.len();

    let mut test: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); train.len()];
    let mut warnings = Vec::new();
    let mut overlaps = 0usize;
    for &(raw_u, raw_i) in test_pairs {
        let (u, i) = (users.intern(raw_u), items.intern(raw_i));
        if u == test.len() {
            test.push(BTreeSet::new());
            warnings.push(format!("test user {raw_u} has no training interactions"));
        }
        if u < train.len() && train[u].contains(&i) {
            overlaps += 1;
            continue;
        }
        test[u].insert(i);
    }
    if overlaps > 0 {
        warnings.push(format!(
            "{overlaps} test interaction(s) also present in train were dropped from test"
        ));
    }
    let cold_items = items.raw.len() - train_items;
    if cold_items > 0 {
        warnings.push(format!("{cold_items} test item(s) never appear in train"));
    }

    let num_users = users.raw.len();
    train.resize(num_users, BTreeSet::new());
    let train: Vec<Vec<usize>> = train.into_iter().map(|s| s.into_iter().collect()).collect();
    let test_pos: Vec<Vec<usize>> = test.into_iter().map(|s| s.into_iter().collect()).collect();
    let (train_pos, valid_pos) = split_validation(&train, valid_fraction, seed);

    Ok(InteractionDataset {
        num_users,
        num_items: items.raw.len(),
        user_ids: users.raw,
        item_ids: items.raw,
        train_pos,
        valid_pos,
        test_pos,
        warnings,
    })
}

/// Per-user uniform sampling without replacement of the validation holdout.
fn split_validation(
    train: &[Vec<usize>],
    valid_fraction: f64,
    seed: u64,
) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
    let mut rng = stream_rng(seed, Stream::Split, 0);
    let mut kept = Vec::with_capacity(train.len());
    let mut held = Vec::with_capacity(train.len());
    for items in train {
        let n_valid = holdout_count(items.len(), valid_fraction);
        if n_valid == 0 {
            kept.push(items.clone());
            held.push(Vec::new());
            continue;
        }
        let mut chosen = vec![false; items.len()];
        for idx in index::sample(&mut rng, items.len(), n_valid) {
            chosen[idx] = true;
        }
        let (mut v, mut t) = (
            Vec::with_capacity(n_valid),
            Vec::with_capacity(items.len() - n_valid),
        );
        for (&item, &c) in items.iter().zip(&chosen) {
            if c {
                v.push(item);
            } else {
                t.push(item);
            }
        }
        kept.push(std::mem::take(&mut t));
        held.push(std::mem::take(&mut v));
    }
    (kept, held)
}

impl InteractionDataset {
    /// Merges validation back into train and draws a fresh holdout. Equal to
    /// `build_dataset` on the original files with the new seed.
    pub fn resplit(&self, valid_fraction: f64, seed: u64) -> Result<InteractionDataset> {
        if !(0.0..1.0).contains(&valid_fraction) {
            return Err(Error::InvalidArgument(format!(
                "valid_fraction must lie in [0, 1), got {valid_fraction}"
            )));
        }
        let merged: Vec<Vec<usize>> = self
            .train_pos
            .iter()
            .zip(&self.valid_pos)
            .map(|(t, v)| {
                let mut all: Vec<usize> = t.iter().chain(v).copied().collect();
                all.sort_unstable();
                all
            })
            .collect();
        let (train_pos, valid_pos) = split_validation(&merged, valid_fraction, seed);
        Ok(InteractionDataset {
            train_pos,
            valid_pos,
            ..self.clone()
        })
    }

    pub fn num_train(&self) -> usize {
        self.train_pos.iter().map(Vec::len).sum()
    }

    pub fn num_valid(&self) -> usize {
        self.valid_pos.iter().map(Vec::len).sum()
    }

    pub fn num_test(&self) -> usize {
        self.test_pos.iter().map(Vec::len).sum()
    }

    /// Checks the id-range, sortedness and disjointness invariants.
    pub fn validate(&self) -> Result<()> {
        let lists = [&self.train_pos, &self.valid_pos, &self.test_pos];
        if self.user_ids.len() != self.num_users || self.item_ids.len() != self.num_items {
            return Err(Error::InvalidArgument(
                "id map sizes disagree with counts".into(),
            ));
        }
        for list in lists {
            if list.len() != self.num_users {
                return Err(Error::InvalidArgument(
                    "per-user list count differs from num_users".into(),
                ));
            }
        }
        for u in 0..self.num_users {
            for list in lists {
                let row = &list[u];
                if row.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::InvalidArgument(format!(
                        "user {u}: positives not strictly increasing"
                    )));
                }
                if let Some(&last) = row.last() {
                    if last >= self.num_items {
                        return Err(Error::OutOfRange {
                            what: "item",
                            id: last,
                            limit: self.num_items,
                        });
                    }
                }
            }
            let a = &self.train_pos[u];
            let b = &self.valid_pos[u];
            let c = &self.test_pos[u];
            if intersects(a, b) || intersects(a, c) || intersects(b, c) {
                return Err(Error::InvalidArgument(format!("user {u}: splits overlap")));
            }
        }
        Ok(())
    }
}

fn intersects(a: &[usize], b: &[usize]) -> bool {
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => return true,
        }
    }
    false
}

/// The single relation every interaction is cast to.
pub const INTERACTS_WITH: usize = 0;

/// One `<subject, relation, object>` fact over entity ids.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub subject: usize,
    pub relation: usize,
    pub object: usize,
}

impl Triple {
    pub fn new(subject: usize, relation: usize, object: usize) -> Self {
        Triple {
            subject,
            relation,
            object,
        }
    }
}

/// The recast knowledge graph: users and items as entities, one relation.
#[derive(Clone, Debug, PartialEq)]
pub struct TripleGraph {
    pub num_entities: usize,
    pub num_relations: usize,
    /// Users occupy entity ids `[0, num_users)`.
    pub num_users: usize,
    pub triples: Vec<Triple>,
}

impl TripleGraph {
    pub fn num_items(&self) -> usize {
        self.num_entities - self.num_users
    }

    /// Entity id of item `item`.
    pub fn item_entity(&self, item: usize) -> usize {
        self.num_users + item
    }
}

/// One `<u, interactsWith, N + i>` triple per train positive, ascending `(u, i)`.
pub fn recast_to_triples(dataset: &InteractionDataset) -> TripleGraph {
    let n = dataset.num_users;
    let triples = dataset
        .train_pos
        .iter()
        .enumerate()
        .flat_map(|(u, items)| {
            items
                .iter()
                .map(move |&i| Triple::new(u, INTERACTS_WITH, n + i))
        })
        .collect();
    TripleGraph {
        num_entities: n + dataset.num_items,
        num_relations: 1,
        num_users: n,
        triples,
    }
}

/// Corpus-level counts, taken over train, validation and test together.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub num_users: usize,
    pub num_items: usize,
    pub num_interactions: usize,
    pub sparsity: f64,
    /// Test users without any train or validation positive.
    pub cold_test_users: usize,
    /// Items that only occur in the test split.
    pub cold_test_items: usize,
}

pub fn dataset_stats(dataset: &InteractionDataset) -> DatasetStats {
    let interactions = dataset.num_train() + dataset.num_valid() + dataset.num_test();
    let cells = dataset.num_users as f64 * dataset.num_items as f64;
    let sparsity = if cells > 0.0 {
        (1.0 - interactions as f64 / cells).clamp(0.0, 1.0)
    } else {
        0.0
    };

    let mut seen_item = vec![false; dataset.num_items];
    let mut cold_users = 0;
    for u in 0..dataset.num_users {
        for &i in dataset.train_pos[u].iter().chain(&dataset.valid_pos[u]) {
            seen_item[i] = true;
        }
        if dataset.train_pos[u].is_empty()
            && dataset.valid_pos[u].is_empty()
            && !dataset.test_pos[u].is_empty()
        {
            cold_users += 1;
        }
    }
    let cold_items = dataset
        .test_pos
        .iter()
        .flatten()
        .filter(|&&i| !seen_item[i])
        .collect::<BTreeSet<_>>()
        .len();

    DatasetStats {
        num_users: dataset.num_users,
        num_items: dataset.num_items,
        num_interactions: interactions,
        sparsity,
        cold_test_users: cold_users,
        cold_test_items: cold_items,
    }
}

impl DatasetStats {
    /// `dataset  users  items  interactions  sparsity` as one TSV row.
    pub fn tsv_row(&self, name: &str) -> String {
        format!(
            "{name}\t{}\t{}\t{}\t{:.4}",
            self.num_users, self.num_items, self.num_interactions, self.sparsity
        )
    }
}

/// Loads `train.txt` (required) and `test.txt` (optional) from `dir`.
pub fn load_split_dir(dir: &Path, format: FileFormat) -> Result<(Vec<RawPair>, Vec<RawPair>)> {
    let train = load_interactions(&dir.join("train.txt"), format)?;
    let test_path = dir.join("test.txt");
    let test = if test_path.exists() {
        load_interactions(&test_path, format)?
    } else {
        Vec::new()
    };
    Ok((train, test))
}

/// Block-structured corpus: users and items are cut into `blocks` contiguous
/// groups and every user interacts with every item of its own group. A seeded
/// `test_fraction` of each user's items is held out as test.
pub fn synthetic_blocks(
    num_users: usize,
    num_items: usize,
    blocks: usize,
    test_fraction: f64,
    seed: u64,
) -> Result<InteractionDataset> {
    if blocks == 0 || blocks > num_users || blocks > num_items {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= blocks <= min(users, items), got {blocks} for {num_users}x{num_items}"
        )));
    }
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::InvalidArgument(format!(
            "test_fraction must lie in [0, 1), got {test_fraction}"
        )));
    }
    let mut rng = stream_rng(seed, Stream::Synthetic, 0);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for u in 0..num_users {
        let b = u * blocks / num_users;
        let items: Vec<u64> = (0..num_items)
            .filter(|i| i * blocks / num_items == b)
            .map(|i| i as u64)
            .collect();
        let n_test = holdout_count(items.len(), test_fraction).min(items.len() - 1);
        let held: BTreeSet<usize> = index::sample(&mut rng, items.len(), n_test)
            .into_iter()
            .collect();
        for (idx, &i) in items.iter().enumerate() {
            if held.contains(&idx) {
                test.push((u as u64, i));
            } else {
                train.push((u as u64, i));
            }
        }
    }
    build_dataset(&train, &test, 0.0, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(text: &str, format: FileFormat) -> Result<Vec<RawPair>> {
        parse_interactions(text, format, Path::new("mem"))
    }

    #[test]
    fn adjacency_line_expands_to_pairs() {
        assert_eq!(
            parse("0 12 7\n", FileFormat::Adjacency).unwrap(),
            vec![(0, 12), (0, 7)]
        );
    }

    #[test]
    fn pairs_keep_duplicates() {
        assert_eq!(
            parse("3\t5\n3\t5\n", FileFormat::Pairs).unwrap(),
            vec![(3, 5), (3, 5)]
        );
    }

    #[test]
    fn malformed_token_names_line() {
        match parse("0 twelve\n", FileFormat::Adjacency) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
        match parse("1\t2\n3 4\n", FileFormat::Pairs) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_an_error() {
        assert!(matches!(
            parse("", FileFormat::Adjacency),
            Err(Error::EmptyFile(_))
        ));
        assert!(matches!(
            parse("\n\n", FileFormat::Pairs),
            Err(Error::EmptyFile(_))
        ));
    }

    #[test]
    fn zero_holdout_keeps_everything_in_train() {
        let ds = build_dataset(&[(0, 0), (0, 1), (1, 0), (1, 1)], &[], 0.0, 1).unwrap();
        assert_eq!(ds.num_train(), 4);
        assert!(ds.valid_pos.iter().all(Vec::is_empty));
    }

    #[test]
    fn ten_percent_of_ten_is_one() {
        let train: Vec<RawPair> = (0..10).map(|i| (42, i)).collect();
        let ds = build_dataset(&train, &[], 0.1, 3).unwrap();
        assert_eq!(ds.valid_pos[0].len(), 1);
        assert_eq!(ds.train_pos[0].len(), 9);
        let small: Vec<RawPair> = (0..9).map(|i| (1, i)).collect();
        let ds = build_dataset(&small, &[], 0.1, 3).unwrap();
        assert!(ds.valid_pos[0].is_empty());
    }

    #[test]
    fn duplicates_collapse() {
        let ds = build_dataset(&[(5, 9), (5, 9)], &[], 0.0, 0).unwrap();
        assert_eq!(ds.train_pos, vec![vec![0]]);
    }

    #[test]
    fn ids_follow_first_appearance() {
        let ds = build_dataset(&[(10, 7), (3, 8), (10, 8)], &[(99, 7), (3, 50)], 0.0, 0).unwrap();
        assert_eq!(ds.user_ids, vec![10, 3, 99]);
        assert_eq!(ds.item_ids, vec![7, 8, 50]);
        assert_eq!(ds.test_pos[2], vec![0]);
        assert!(ds.warnings.iter().any(|w| w.contains("99")));
        let stats = dataset_stats(&ds);
        assert_eq!(stats.cold_test_users, 1);
        assert_eq!(stats.cold_test_items, 1);
    }

    #[test]
    fn bad_fraction_rejected() {
        assert!(build_dataset(&[(0, 0)], &[], 1.0, 0).is_err());
        assert!(build_dataset(&[], &[], 0.0, 0).is_err());
    }

    #[test]
    fn recast_small_case() {
        let ds = build_dataset(&[(0, 0), (1, 1)], &[], 0.0, 0).unwrap();
        let g = recast_to_triples(&ds);
        assert_eq!(g.num_entities, 4);
        assert_eq!(g.triples, vec![Triple::new(0, 0, 2), Triple::new(1, 0, 3)]);
    }

    #[test]
    fn dense_toy_has_zero_sparsity() {
        let ds = build_dataset(&[(0, 0), (0, 1), (1, 0), (1, 1)], &[], 0.0, 0).unwrap();
        let s = dataset_stats(&ds);
        assert_eq!(s.sparsity, 0.0);
        assert_eq!(s.tsv_row("toy"), "toy\t2\t2\t4\t0.0000");
    }

    #[test]
    fn resplit_matches_fresh_build() {
        let train: Vec<RawPair> = (0..60).map(|x| (x % 4, x * 7 % 31)).collect();
        let a = build_dataset(&train, &[], 0.2, 11).unwrap();
        let b = build_dataset(&train, &[], 0.2, 5)
            .unwrap()
            .resplit(0.2, 11)
            .unwrap();
        assert_eq!(a, b);
    }

    fn corpus() -> impl Strategy<Value = (Vec<RawPair>, Vec<RawPair>, f64, u64)> {
        (
            prop::collection::vec((0u64..15, 0u64..25), 1..200),
            prop::collection::vec((0u64..18, 0u64..30), 0..60),
            0.0f64..0.9,
            any::<u64>(),
        )
    }

    proptest! {
        #[test]
        fn built_datasets_satisfy_invariants((train, test, frac, seed) in corpus()) {
            let ds = build_dataset(&train, &test, frac, seed).unwrap();
            ds.validate().unwrap();
            let again = build_dataset(&train, &test, frac, seed).unwrap();
            prop_assert_eq!(&ds, &again);

            let g = recast_to_triples(&ds);
            prop_assert_eq!(g.triples.len(), ds.num_train());
            let mut back = vec![Vec::new(); ds.num_users];
            for t in &g.triples {
                prop_assert!(t.subject < ds.num_users);
                prop_assert!(t.object >= ds.num_users && t.object < g.num_entities);
                prop_assert_eq!(t.relation, 0);
                back[t.subject].push(t.object - ds.num_users);
            }
            prop_assert_eq!(back, ds.train_pos.clone());

            let s = dataset_stats(&ds);
            let expect = 1.0 - s.num_interactions as f64 / (s.num_users as f64 * s.num_items as f64);
            prop_assert!((0.0..=1.0).contains(&s.sparsity));
            prop_assert!((s.sparsity - expect).abs() <= f64::EPSILON);
        }
    }

    #[test]
    fn synthetic_blocks_shape() {
        let ds = synthetic_blocks(50, 30, 5, 0.2, 3).unwrap();
        ds.validate().unwrap();
        assert_eq!((ds.num_users, ds.num_items), (50, 30));
        assert_eq!(ds.num_train(), 250);
        assert_eq!(ds.num_test(), 50);
        for u in 0..50 {
            let block = |i: usize| ds.item_ids[i] as usize * 5 / 30;
            let b = u * 5 / 50;
            assert!(ds.train_pos[u]
                .iter()
                .chain(&ds.test_pos[u])
                .all(|&i| block(i) == b));
        }
        assert_eq!(synthetic_blocks(50, 30, 5, 0.2, 3).unwrap(), ds);
    }
}
