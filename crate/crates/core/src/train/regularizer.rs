//! Norm penalties on the embedding rows a batch touches.

use std::collections::BTreeSet;

use crate::model::{Block, EmbeddingModel, Gradients, ModelKind};
use crate::train::config::RegularizerKind;

/// Rows named by the examples of a batch, per parameter block.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TouchedRows {
    pub entity: BTreeSet<usize>,
    pub entity_obj: BTreeSet<usize>,
    pub relation: BTreeSet<usize>,
}

impl TouchedRows {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn block(&self, block: Block) -> &BTreeSet<usize> {
        match block {
            Block::Entity => &self.entity,
            Block::EntityObj => &self.entity_obj,
            Block::Relation => &self.relation,
        }
    }

    fn block_mut(&mut self, block: Block) -> &mut BTreeSet<usize> {
        match block {
            Block::Entity => &mut self.entity,
            Block::EntityObj => &mut self.entity_obj,
            Block::Relation => &mut self.relation,
        }
    }

    /// Marks the subject, relation and object rows used by `(s, p, o)`.
    pub fn add_triple(&mut self, model: &EmbeddingModel, s: usize, p: usize, o: usize) {
        self.entity.insert(s);
        if model.kind().has_relation_table() {
            self.relation.insert(p);
        }
        self.block_mut(model.object_block()).insert(o);
    }
}

/// Penalty of one row and its gradient (scaled by `weight`) added to `grad`.
fn row_penalty(
    kind: RegularizerKind,
    model_kind: ModelKind,
    dim: usize,
    p: f64,
    weight: f64,
    row: &[f64],
    grad: &mut [f64],
) -> f64 {
    match kind {
        RegularizerKind::None => 0.0,
        RegularizerKind::L2 => {
            let mut sum = 0.0;
            for (g, &v) in grad.iter_mut().zip(row) {
                sum += v * v;
                *g += weight * 2.0 * v;
            }
            weight * sum
        }
        RegularizerKind::Lp => {
            let mut sum = 0.0;
            for (g, &v) in grad.iter_mut().zip(row) {
                let a = v.abs();
                sum += a.powf(p);
                if a > 0.0 {
                    *g += weight * p * a.powf(p - 1.0) * v.signum();
                }
            }
            weight * sum
        }
        RegularizerKind::N3 if model_kind == ModelKind::ComplEx => {
            // Cubed moduli of the complex components.
            let (re, im) = row.split_at(dim);
            let mut sum = 0.0;
            for j in 0..dim {
                let modulus = (re[j] * re[j] + im[j] * im[j]).sqrt();
                sum += modulus * modulus * modulus;
                grad[j] += weight * 3.0 * modulus * re[j];
                grad[dim + j] += weight * 3.0 * modulus * im[j];
            }
            weight * sum
        }
        RegularizerKind::N3 => {
            let mut sum = 0.0;
            for (g, &v) in grad.iter_mut().zip(row) {
                let a = v.abs();
                sum += a * a * a;
                *g += weight * 3.0 * a * v;
            }
            weight * sum
        }
    }
}

/// `weight * sum_rows penalty(row)` over the touched rows, accumulating gradients.
/// A zero weight or `None` kind contributes nothing and touches no gradient row.
pub fn regularize(
    model: &EmbeddingModel,
    touched: &TouchedRows,
    kind: RegularizerKind,
    weight: f64,
    lp_p: f64,
    grads: &mut Gradients,
) -> f64 {
    if kind == RegularizerKind::None || weight == 0.0 {
        return 0.0;
    }
    let w = model.width();
    let mut penalty = 0.0;
    for block in Block::ALL {
        if model.block(block).is_none() {
            continue;
        }
        for &r in touched.block(block) {
            let row = model.row(block, r);
            let g = grads.row_mut(block, r, w);
            penalty += row_penalty(kind, model.kind(), model.dim(), lp_p, weight, row, g);
        }
    }
    penalty
}
