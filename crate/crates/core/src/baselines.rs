//! Reference recommenders without embeddings: MostPop, Random, UserkNN, ItemkNN.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;

use crate::dataset::InteractionDataset;
use crate::error::{Error, Result};
use crate::eval::Scorer;
use crate::rng::{stream_rng, Stream};

/// Train interaction count per item.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PopularityModel {
    pub item_counts: Vec<u64>,
}

pub fn build_popularity(dataset: &InteractionDataset) -> Result<PopularityModel> {
    let mut item_counts = vec![0u64; dataset.num_items];
    for items in &dataset.train_pos {
        for &i in items {
            item_counts[i] += 1;
        }
    }
    if item_counts.iter().all(|&c| c == 0) {
        return Err(Error::InvalidArgument("no training interactions".into()));
    }
    Ok(PopularityModel { item_counts })
}

impl Scorer for PopularityModel {
    fn num_items(&self) -> usize {
        self.item_counts.len()
    }

    fn score_items(&self, _user: usize, out: &mut [f64]) -> Result<()> {
        for (o, &c) in out.iter_mut().zip(&self.item_counts) {
            *o = c as f64;
        }
        Ok(())
    }
}

/// Uniform `[0, 1)` scores from a per-user stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RandomScorer {
    pub seed: u64,
    pub num_items: usize,
}

pub fn random_scores(user: usize, num_items: usize, seed: u64) -> Vec<f64> {
    let mut rng = stream_rng(seed, Stream::RandomBaseline, user as u64);
    (0..num_items).map(|_| rng.gen::<f64>()).collect()
}

impl Scorer for RandomScorer {
    fn num_items(&self) -> usize {
        self.num_items
    }

    fn score_items(&self, user: usize, out: &mut [f64]) -> Result<()> {
        let mut rng = stream_rng(self.seed, Stream::RandomBaseline, user as u64);
        out.iter_mut().for_each(|o| *o = rng.gen::<f64>());
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NeighborMode {
    /// Neighbors are users; score sums similarities to users who took the item.
    User,
    /// Neighbors are items; score sums similarities to the user's items.
    Item,
}

impl fmt::Display for NeighborMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NeighborMode::User => "user",
            NeighborMode::Item => "item",
        })
    }
}

impl FromStr for NeighborMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "user" | "userknn" => Ok(NeighborMode::User),
            "item" | "itemknn" => Ok(NeighborMode::Item),
            _ => Err(Error::InvalidArgument(format!(
                "unknown neighborhood mode {s:?}"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Similarity {
    Cosine,
}

/// Default neighborhood size.
pub const DEFAULT_NEIGHBORS: usize = 50;

/// Default cap on the similarity index size, in bytes.
pub const DEFAULT_MEMORY_BUDGET: usize = 4 << 30;

#[derive(Clone, Debug, PartialEq)]
pub struct KnnConfig {
    pub mode: NeighborMode,
    /// `None` keeps every neighbor with nonzero similarity.
    pub num_neighbors: Option<usize>,
    pub similarity: Similarity,
    pub memory_budget: usize,
}

impl KnnConfig {
    pub fn new(mode: NeighborMode, num_neighbors: Option<usize>) -> Self {
        KnnConfig {
            mode,
            num_neighbors,
            similarity: Similarity::Cosine,
            memory_budget: DEFAULT_MEMORY_BUDGET,
        }
    }
}

/// UserkNN / ItemkNN with a truncated cosine similarity index.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborhoodModel {
    pub mode: NeighborMode,
    pub num_neighbors: Option<usize>,
    pub similarity: Similarity,
    /// Per entity: `(neighbor, similarity)` by descending similarity, ties by ascending id.
    pub similarity_index: Vec<Vec<(usize, f64)>>,
    /// The same lists sorted by neighbor id.
    by_id: Vec<Vec<(usize, f64)>>,
    /// Item mode: for item `j`, the items `i` that keep `j` as a neighbor, with `σ(i, j)`.
    reverse: Vec<Vec<(usize, f64)>>,
    user_items: Vec<Vec<usize>>,
    item_users: Vec<Vec<usize>>,
}

fn transpose(rows: &[Vec<usize>], num_cols: usize) -> Vec<Vec<usize>> {
    let mut cols = vec![Vec::new(); num_cols];
    for (r, row) in rows.iter().enumerate() {
        for &c in row {
            cols[c].push(r);
        }
    }
    cols
}

/// Cosine of two binary vectors with `a` and `b` ones and `common` shared ones.
pub fn binary_cosine(common: usize, a: usize, b: usize) -> f64 {
    common as f64 / ((a as f64) * (b as f64)).sqrt()
}

pub fn build_knn(dataset: &InteractionDataset, config: &KnnConfig) -> Result<NeighborhoodModel> {
    if config.num_neighbors == Some(0) {
        return Err(Error::InvalidArgument(
            "num_neighbors must be at least 1".into(),
        ));
    }
    let user_items = dataset.train_pos.clone();
    let item_users = transpose(&user_items, dataset.num_items);
    // Entities being compared, and the incidence used to find co-occurrences.
    let (own, other) = match config.mode {
        NeighborMode::User => (&user_items, &item_users),
        NeighborMode::Item => (&item_users, &user_items),
    };
    let n = own.len();
    let per_entity = config
        .num_neighbors
        .unwrap_or(n.saturating_sub(1))
        .min(n.saturating_sub(1));
    let bytes = n
        .saturating_mul(per_entity)
        .saturating_mul(2 * std::mem::size_of::<(usize, f64)>());
    if bytes > config.memory_budget {
        return Err(Error::InvalidArgument(format!(
            "similarity index would need about {bytes} bytes, over the {} byte budget; lower num_neighbors",
            config.memory_budget
        )));
    }

    let similarity_index: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map_init(
            || (vec![0usize; n], Vec::new()),
            |(counts, seen), e| {
                for &x in &own[e] {
                    for &f in &other[x] {
                        if f != e {
                            if counts[f] == 0 {
                                seen.push(f);
                            }
                            counts[f] += 1;
                        }
                    }
                }
                let mut list: Vec<(usize, f64)> = seen
                    .drain(..)
                    .map(|f| {
                        let c = std::mem::take(&mut counts[f]);
                        (f, binary_cosine(c, own[e].len(), own[f].len()))
                    })
                    .collect();
                list.sort_unstable_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                if let Some(k) = config.num_neighbors {
                    list.truncate(k);
                }
                list
            },
        )
        .collect();

    let by_id: Vec<Vec<(usize, f64)>> = similarity_index
        .iter()
        .map(|l| {
            let mut v = l.clone();
            v.sort_unstable_by_key(|&(f, _)| f);
            v
        })
        .collect();
    let reverse = match config.mode {
        NeighborMode::User => Vec::new(),
        NeighborMode::Item => {
            let mut rev = vec![Vec::new(); n];
            for (i, list) in by_id.iter().enumerate() {
                for &(j, s) in list {
                    rev[j].push((i, s));
                }
            }
            rev
        }
    };
    Ok(NeighborhoodModel {
        mode: config.mode,
        num_neighbors: config.num_neighbors,
        similarity: config.similarity,
        similarity_index,
        by_id,
        reverse,
        user_items,
        item_users,
    })
}

impl NeighborhoodModel {
    fn sim_in_list(&self, owner: usize, neighbor: usize) -> f64 {
        let list = &self.by_id[owner];
        list.binary_search_by_key(&neighbor, |&(f, _)| f)
            .map_or(0.0, |pos| list[pos].1)
    }

    /// Item mode: `sum_{j in I_u} σ(i, j)` over `j` kept in `i`'s neighbor list.
    /// User mode: `sum_{v in U_i} σ(u, v)` over `v` kept in `u`'s neighbor list.
    pub fn knn_score(&self, user: usize, item: usize) -> Result<f64> {
        let (nu, ni) = (self.user_items.len(), self.item_users.len());
        if user >= nu {
            return Err(Error::OutOfRange {
                what: "user",
                id: user,
                limit: nu,
            });
        }
        if item >= ni {
            return Err(Error::OutOfRange {
                what: "item",
                id: item,
                limit: ni,
            });
        }
        Ok(match self.mode {
            NeighborMode::Item => self.user_items[user]
                .iter()
                .map(|&j| self.sim_in_list(item, j))
                .sum(),
            NeighborMode::User => self.item_users[item]
                .iter()
                .map(|&v| self.sim_in_list(user, v))
                .sum(),
        })
    }
}

impl Scorer for NeighborhoodModel {
    fn num_items(&self) -> usize {
        self.item_users.len()
    }

    // Both branches add terms for a given item in ascending neighbor order,
    // so the sums equal `knn_score` bit for bit.
    fn score_items(&self, user: usize, out: &mut [f64]) -> Result<()> {
        if user >= self.user_items.len() {
            return Err(Error::OutOfRange {
                what: "user",
                id: user,
                limit: self.user_items.len(),
            });
        }
        out.fill(0.0);
        match self.mode {
            NeighborMode::Item => {
                for &j in &self.user_items[user] {
                    for &(i, s) in &self.reverse[j] {
                        out[i] += s;
                    }
                }
            }
            NeighborMode::User => {
                for &(v, s) in &self.by_id[user] {
                    for &i in &self.user_items[v] {
                        out[i] += s;
                    }
                }
            }
        }
        Ok(())
    }
}
