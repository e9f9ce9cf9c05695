//! Embedding tables and the factorization scoring functions.
//!
//! Every in-scope scorer factors as `phi(s, p, o) = f(q(s, p), o)` where the
//! query `q` combines the subject and relation rows:
//!
//! | kind     | q(s, p)                                   | f(q, o)        |
//! |----------|-------------------------------------------|----------------|
//! | TransE   | s + p                                     | -\|q - o\|_2   |
//! | DistMult | s * p                                     | <q, o>         |
//! | CP       | s * p  (s from the subject table)         | <q, o_obj>     |
//! | ComplEx  | complex product s * p                     | <q, o> (real)  |
//! | MF       | s                                         | <q, o>         |
//!
//! ComplEx rows hold `k` real parts followed by `k` imaginary parts, so
//! `Re(<s, p, conj(o)>)` is the real dot product of `[Re(sp), Im(sp)]` with
//! `[Re(o), Im(o)]`.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    TransE,
    DistMult,
    CP,
    ComplEx,
    MF,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::TransE,
        ModelKind::DistMult,
        ModelKind::CP,
        ModelKind::ComplEx,
        ModelKind::MF,
    ];

    /// Checkpoint tag.
    pub fn code(self) -> u8 {
        match self {
            ModelKind::TransE => 0,
            ModelKind::DistMult => 1,
            ModelKind::CP => 2,
            ModelKind::ComplEx => 3,
            ModelKind::MF => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        ModelKind::ALL.into_iter().find(|k| k.code() == code)
    }

    pub fn has_object_table(self) -> bool {
        self == ModelKind::CP
    }

    pub fn has_relation_table(self) -> bool {
        self != ModelKind::MF
    }

    /// Reals per row for embedding size `dim`.
    pub fn width(self, dim: usize) -> usize {
        if self == ModelKind::ComplEx {
            2 * dim
        } else {
            dim
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::TransE => "transe",
            ModelKind::DistMult => "distmult",
            ModelKind::CP => "cp",
            ModelKind::ComplEx => "complex",
            ModelKind::MF => "mf",
        })
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "transe" => Ok(ModelKind::TransE),
            "distmult" => Ok(ModelKind::DistMult),
            "cp" => Ok(ModelKind::CP),
            "complex" => Ok(ModelKind::ComplEx),
            "mf" => Ok(ModelKind::MF),
            other => Err(Error::InvalidArgument(format!(
                "unknown model kind {other:?}"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitScheme {
    Uniform,
    Normal,
}

/// How parameter tables are filled. `Uniform` draws from `[-scale, scale)`,
/// `Normal` from `N(0, scale^2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitSpec {
    pub scheme: InitScheme,
    pub scale: f64,
    pub seed: u64,
}

impl InitSpec {
    /// Uniform in `[-0.1/sqrt(k), 0.1/sqrt(k)]`.
    pub fn default_for(dim: usize, seed: u64) -> Self {
        InitSpec {
            scheme: InitScheme::Uniform,
            scale: 0.1 / (dim.max(1) as f64).sqrt(),
            seed,
        }
    }
}

/// Parameter blocks of a model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Block {
    Entity,
    EntityObj,
    Relation,
}

impl Block {
    pub const ALL: [Block; 3] = [Block::Entity, Block::EntityObj, Block::Relation];

    pub fn name(self) -> &'static str {
        match self {
            Block::Entity => "entity",
            Block::EntityObj => "entity_obj",
            Block::Relation => "relation",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingModel {
    kind: ModelKind,
    dim: usize,
    num_entities: usize,
    num_relations: usize,
    entity: Vec<f64>,
    entity_obj: Option<Vec<f64>>,
    relation: Option<Vec<f64>>,
}

/// Sparse row gradients keyed by block and row index. Ordered maps keep the
/// optimizer's visiting order deterministic.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    pub entity: BTreeMap<usize, Vec<f64>>,
    pub entity_obj: BTreeMap<usize, Vec<f64>>,
    pub relation: BTreeMap<usize, Vec<f64>>,
}

impl Gradients {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn block(&self, block: Block) -> &BTreeMap<usize, Vec<f64>> {
        match block {
            Block::Entity => &self.entity,
            Block::EntityObj => &self.entity_obj,
            Block::Relation => &self.relation,
        }
    }

    pub fn block_mut(&mut self, block: Block) -> &mut BTreeMap<usize, Vec<f64>> {
        match block {
            Block::Entity => &mut self.entity,
            Block::EntityObj => &mut self.entity_obj,
            Block::Relation => &mut self.relation,
        }
    }

    /// Mutable gradient row, zero-initialised on first touch.
    pub fn row_mut(&mut self, block: Block, row: usize, width: usize) -> &mut [f64] {
        self.block_mut(block)
            .entry(row)
            .or_insert_with(|| vec![0.0; width])
    }

    pub fn is_empty(&self) -> bool {
        self.entity.is_empty() && self.entity_obj.is_empty() && self.relation.is_empty()
    }

    /// Adds `scale * other` into `self`.
    pub fn merge_scaled(&mut self, other: &Gradients, scale: f64) {
        for block in Block::ALL {
            for (&row, g) in other.block(block) {
                let dst = self.row_mut(block, row, g.len());
                for (d, s) in dst.iter_mut().zip(g) {
                    *d += scale * s;
                }
            }
        }
    }
}

fn axpy(dst: &mut [f64], alpha: f64, src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += alpha * s;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Allocates and seeds a model. Identical `init` gives bit-identical tables.
pub fn init_model(
    kind: ModelKind,
    dim: usize,
    num_entities: usize,
    num_relations: usize,
    init: InitSpec,
) -> Result<EmbeddingModel> {
    if dim == 0 {
        return Err(Error::InvalidArgument(
            "embedding dimension must be at least 1".into(),
        ));
    }
    if num_entities == 0 || num_relations == 0 {
        return Err(Error::InvalidArgument(
            "model needs at least one entity and one relation".into(),
        ));
    }
    if !(init.scale > 0.0 && init.scale.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "init scale must be > 0, got {}",
            init.scale
        )));
    }
    let width = kind.width(dim);
    let mut rng = stream_rng(init.seed, Stream::Init, 0);
    let mut draw = |len: usize| -> Vec<f64> {
        (0..len)
            .map(|_| match init.scheme {
                InitScheme::Uniform => rng.gen_range(-init.scale..init.scale),
                InitScheme::Normal => init.scale * rng.sample::<f64, _>(StandardNormal),
            })
            .collect()
    };
    let entity = draw(num_entities * width);
    let entity_obj = kind.has_object_table().then(|| draw(num_entities * width));
    let relation = kind
        .has_relation_table()
        .then(|| draw(num_relations * width));
    Ok(EmbeddingModel {
        kind,
        dim,
        num_entities,
        num_relations,
        entity,
        entity_obj,
        relation,
    })
}

impl EmbeddingModel {
    /// Assembles a model from explicit tables, validating their shapes.
    pub fn from_parts(
        kind: ModelKind,
        dim: usize,
        num_entities: usize,
        num_relations: usize,
        entity: Vec<f64>,
        entity_obj: Option<Vec<f64>>,
        relation: Option<Vec<f64>>,
    ) -> Result<Self> {
        let width = kind.width(dim);
        let shape_err = |what: &str| {
            Error::InvalidArgument(format!("{what} table has the wrong shape for {kind}"))
        };
        if dim == 0 || num_entities == 0 || num_relations == 0 {
            return Err(Error::InvalidArgument("empty model".into()));
        }
        if entity.len() != num_entities * width {
            return Err(shape_err("entity"));
        }
        match (&entity_obj, kind.has_object_table()) {
            (Some(t), true) if t.len() == num_entities * width => {}
            (None, false) => {}
            _ => return Err(shape_err("entity_obj")),
        }
        match (&relation, kind.has_relation_table()) {
            (Some(t), true) if t.len() == num_relations * width => {}
            (None, false) => {}
            _ => return Err(shape_err("relation")),
        }
        Ok(EmbeddingModel {
            kind,
            dim,
            num_entities,
            num_relations,
            entity,
            entity_obj,
            relation,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn width(&self) -> usize {
        self.kind.width(self.dim)
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    pub fn block(&self, block: Block) -> Option<&[f64]> {
        match block {
            Block::Entity => Some(&self.entity),
            Block::EntityObj => self.entity_obj.as_deref(),
            Block::Relation => self.relation.as_deref(),
        }
    }

    pub fn block_mut(&mut self, block: Block) -> Option<&mut [f64]> {
        match block {
            Block::Entity => Some(&mut self.entity),
            Block::EntityObj => self.entity_obj.as_deref_mut(),
            Block::Relation => self.relation.as_deref_mut(),
        }
    }

    pub fn row(&self, block: Block, row: usize) -> &[f64] {
        let w = self.width();
        &self.block(block).expect("block present")[row * w..(row + 1) * w]
    }

    pub fn row_mut(&mut self, block: Block, row: usize) -> &mut [f64] {
        let w = self.width();
        &mut self.block_mut(block).expect("block present")[row * w..(row + 1) * w]
    }

    /// Block holding an entity's representation when it appears as object.
    pub fn object_block(&self) -> Block {
        if self.kind.has_object_table() {
            Block::EntityObj
        } else {
            Block::Entity
        }
    }

    pub fn all_finite(&self) -> bool {
        Block::ALL
            .iter()
            .filter_map(|&b| self.block(b))
            .all(|t| t.iter().all(|v| v.is_finite()))
    }

    fn check_entity(&self, e: usize) -> Result<()> {
        if e >= self.num_entities {
            return Err(Error::OutOfRange {
                what: "entity",
                id: e,
                limit: self.num_entities,
            });
        }
        Ok(())
    }

    fn check_relation(&self, p: usize) -> Result<()> {
        if p >= self.num_relations {
            return Err(Error::OutOfRange {
                what: "relation",
                id: p,
                limit: self.num_relations,
            });
        }
        Ok(())
    }

    /// Writes `q(s, p)` into `out` (length `width`).
    pub fn query_into(&self, s: usize, p: usize, out: &mut [f64]) {
        let sv = self.row(Block::Entity, s);
        match self.kind {
            ModelKind::MF => out.copy_from_slice(sv),
            ModelKind::TransE => {
                let pv = self.row(Block::Relation, p);
                for ((o, a), b) in out.iter_mut().zip(sv).zip(pv) {
                    *o = a + b;
                }
            }
            ModelKind::DistMult | ModelKind::CP => {
                let pv = self.row(Block::Relation, p);
                for ((o, a), b) in out.iter_mut().zip(sv).zip(pv) {
                    *o = a * b;
                }
            }
            ModelKind::ComplEx => {
                let k = self.dim;
                let pv = self.row(Block::Relation, p);
                let (sr, si) = sv.split_at(k);
                let (pr, pi) = pv.split_at(k);
                let (qr, qi) = out.split_at_mut(k);
                for j in 0..k {
                    qr[j] = sr[j] * pr[j] - si[j] * pi[j];
                    qi[j] = sr[j] * pi[j] + si[j] * pr[j];
                }
            }
        }
    }

    pub fn query(&self, s: usize, p: usize) -> Vec<f64> {
        let mut q = vec![0.0; self.width()];
        self.query_into(s, p, &mut q);
        q
    }

    /// `f(q, o)` for an object row.
    fn combine(&self, q: &[f64], o_row: &[f64]) -> f64 {
        match self.kind {
            ModelKind::TransE => {
                let sq: f64 = q.iter().zip(o_row).map(|(a, b)| (a - b) * (a - b)).sum();
                -sq.sqrt()
            }
            _ => dot(q, o_row),
        }
    }

    /// Score of one triple.
    pub fn score_triple(&self, s: usize, p: usize, o: usize) -> Result<f64> {
        self.check_entity(s)?;
        self.check_entity(o)?;
        self.check_relation(p)?;
        Ok(self.score_unchecked(s, p, o))
    }

    pub(crate) fn score_unchecked(&self, s: usize, p: usize, o: usize) -> f64 {
        let q = self.query(s, p);
        self.combine(&q, self.row(self.object_block(), o))
    }

    /// Scores `(s, p, c)` for each object candidate `c`; element-wise identical
    /// to `score_triple`.
    pub fn score_candidates(
        &self,
        s: usize,
        p: usize,
        candidates: std::ops::Range<usize>,
    ) -> Result<Vec<f64>> {
        let mut out = vec![0.0; candidates.len()];
        self.score_candidates_into(s, p, candidates, &mut out)?;
        Ok(out)
    }

    pub fn score_candidates_into(
        &self,
        s: usize,
        p: usize,
        candidates: std::ops::Range<usize>,
        out: &mut [f64],
    ) -> Result<()> {
        self.check_entity(s)?;
        self.check_relation(p)?;
        if candidates.end > self.num_entities {
            return Err(Error::OutOfRange {
                what: "entity",
                id: candidates.end - 1,
                limit: self.num_entities,
            });
        }
        let q = self.query(s, p);
        let ob = self.object_block();
        for (slot, c) in out.iter_mut().zip(candidates) {
            *slot = self.combine(&q, self.row(ob, c));
        }
        Ok(())
    }

    /// Scores `(c, p, o)` for each subject candidate `c`.
    pub fn score_subject_candidates(
        &self,
        p: usize,
        o: usize,
        candidates: std::ops::Range<usize>,
    ) -> Vec<f64> {
        candidates.map(|c| self.score_unchecked(c, p, o)).collect()
    }

    /// Propagates `dq` (gradient w.r.t. the query) to the subject and relation rows.
    fn backprop_query(&self, s: usize, p: usize, dq: &[f64], grads: &mut Gradients) {
        let w = self.width();
        match self.kind {
            ModelKind::MF => axpy(grads.row_mut(Block::Entity, s, w), 1.0, dq),
            ModelKind::TransE => {
                axpy(grads.row_mut(Block::Entity, s, w), 1.0, dq);
                axpy(grads.row_mut(Block::Relation, p, w), 1.0, dq);
            }
            ModelKind::DistMult | ModelKind::CP => {
                let sv = self.row(Block::Entity, s);
                let pv = self.row(Block::Relation, p);
                let gs = grads.row_mut(Block::Entity, s, w);
                for j in 0..w {
                    gs[j] += dq[j] * pv[j];
                }
                let gp = grads.row_mut(Block::Relation, p, w);
                for j in 0..w {
                    gp[j] += dq[j] * sv[j];
                }
            }
            ModelKind::ComplEx => {
                let k = self.dim;
                let sv = self.row(Block::Entity, s);
                let pv = self.row(Block::Relation, p);
                let (dqr, dqi) = dq.split_at(k);
                let gs = grads.row_mut(Block::Entity, s, w);
                for j in 0..k {
                    gs[j] += dqr[j] * pv[j] + dqi[j] * pv[k + j];
                    gs[k + j] += -dqr[j] * pv[k + j] + dqi[j] * pv[j];
                }
                let gp = grads.row_mut(Block::Relation, p, w);
                for j in 0..k {
                    gp[j] += dqr[j] * sv[j] + dqi[j] * sv[k + j];
                    gp[k + j] += -dqr[j] * sv[k + j] + dqi[j] * sv[j];
                }
            }
        }
    }

    /// Adds `coeff * d phi(s, p, o) / d theta` into `grads`.
    pub fn accumulate_score_grad(
        &self,
        s: usize,
        p: usize,
        o: usize,
        coeff: f64,
        grads: &mut Gradients,
    ) {
        if coeff == 0.0 {
            return;
        }
        let w = self.width();
        let q = self.query(s, p);
        let ob = self.object_block();
        let o_row = self.row(ob, o);
        let mut dq = vec![0.0; w];
        match self.kind {
            ModelKind::TransE => {
                let diff: Vec<f64> = q.iter().zip(o_row).map(|(a, b)| a - b).collect();
                let n = norm(&diff);
                if n == 0.0 {
                    // Subgradient 0 at the kink.
                    return;
                }
                for j in 0..w {
                    dq[j] = -coeff * diff[j] / n;
                }
                let go = grads.row_mut(ob, o, w);
                for j in 0..w {
                    go[j] += coeff * diff[j] / n;
                }
            }
            _ => {
                for j in 0..w {
                    dq[j] = coeff * o_row[j];
                }
                axpy(grads.row_mut(ob, o, w), coeff, &q);
            }
        }
        self.backprop_query(s, p, &dq, grads);
    }

    /// Gradient of `sum_c coeffs[c] * phi(s, p, candidates[c])`, with the query
    /// and its back-propagation computed once for the whole candidate range.
    pub fn accumulate_object_side_grad(
        &self,
        s: usize,
        p: usize,
        candidates: std::ops::Range<usize>,
        coeffs: &[f64],
        grads: &mut Gradients,
    ) {
        let w = self.width();
        let q = self.query(s, p);
        let ob = self.object_block();
        let mut dq = vec![0.0; w];
        let mut touched = false;
        for (c, &coeff) in candidates.zip(coeffs) {
            if coeff == 0.0 {
                continue;
            }
            let o_row = self.row(ob, c);
            match self.kind {
                ModelKind::TransE => {
                    let diff: Vec<f64> = q.iter().zip(o_row).map(|(a, b)| a - b).collect();
                    let n = norm(&diff);
                    if n == 0.0 {
                        continue;
                    }
                    axpy(&mut dq, -coeff / n, &diff);
                    axpy(grads.row_mut(ob, c, w), coeff / n, &diff);
                }
                _ => {
                    axpy(&mut dq, coeff, o_row);
                    axpy(grads.row_mut(ob, c, w), coeff, &q);
                }
            }
            touched = true;
        }
        if touched {
            self.backprop_query(s, p, &dq, grads);
        }
    }

    /// Cosine between the query `q(s, p)` and the object row; 0 when either is zero.
    pub fn cosine_triple(&self, s: usize, p: usize, o: usize) -> Result<f64> {
        self.check_entity(s)?;
        self.check_entity(o)?;
        self.check_relation(p)?;
        let q = self.query(s, p);
        let o_row = self.row(self.object_block(), o);
        let (nq, no) = (norm(&q), norm(o_row));
        if nq == 0.0 || no == 0.0 {
            return Ok(0.0);
        }
        Ok(dot(&q, o_row) / (nq * no))
    }

    /// Adds `coeff * d cos(q(s, p), o) / d theta` into `grads`.
    pub fn accumulate_cosine_grad(
        &self,
        s: usize,
        p: usize,
        o: usize,
        coeff: f64,
        grads: &mut Gradients,
    ) {
        if coeff == 0.0 {
            return;
        }
        let w = self.width();
        let q = self.query(s, p);
        let ob = self.object_block();
        let o_row = self.row(ob, o).to_vec();
        let (nq, no) = (norm(&q), norm(&o_row));
        if nq == 0.0 || no == 0.0 {
            return;
        }
        let c = dot(&q, &o_row) / (nq * no);
        let dq: Vec<f64> = (0..w)
            .map(|j| coeff * (o_row[j] / (nq * no) - c * q[j] / (nq * nq)))
            .collect();
        let go = grads.row_mut(ob, o, w);
        for j in 0..w {
            go[j] += coeff * (q[j] / (nq * no) - c * o_row[j] / (no * no));
        }
        self.backprop_query(s, p, &dq, grads);
    }

    /// Squared Euclidean distance between the subject row of `u` and the
    /// object row of `i`.
    pub fn sq_distance(&self, u: usize, i: usize) -> Result<f64> {
        self.check_entity(u)?;
        self.check_entity(i)?;
        let a = self.row(Block::Entity, u);
        let b = self.row(self.object_block(), i);
        Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
    }

    pub fn accumulate_sq_distance_grad(
        &self,
        u: usize,
        i: usize,
        coeff: f64,
        grads: &mut Gradients,
    ) {
        if coeff == 0.0 {
            return;
        }
        let w = self.width();
        let ob = self.object_block();
        let diff: Vec<f64> = self
            .row(Block::Entity, u)
            .iter()
            .zip(self.row(ob, i))
            .map(|(x, y)| x - y)
            .collect();
        axpy(grads.row_mut(Block::Entity, u, w), 2.0 * coeff, &diff);
        axpy(grads.row_mut(ob, i, w), -2.0 * coeff, &diff);
    }
}
