//! Sparse first-order optimizers.
//!
//! Only rows present in the gradient with at least one nonzero entry are
//! updated; every other row, and its accumulator state, is left untouched.

use crate::error::{Error, Result};
use crate::model::{Block, EmbeddingModel, Gradients};
use crate::train::config::OptimizerKind;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
pub const ADAGRAD_EPS: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    kind: OptimizerKind,
    /// Adagrad: sum of squared gradients. Adam: first moment.
    first: [Option<Vec<f64>>; 3],
    /// Adam: second moment.
    second: [Option<Vec<f64>>; 3],
    step: u64,
}

fn slot(block: Block) -> usize {
    match block {
        Block::Entity => 0,
        Block::EntityObj => 1,
        Block::Relation => 2,
    }
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, model: &EmbeddingModel) -> Self {
        let zeros = |b: Block| model.block(b).map(|t| vec![0.0; t.len()]);
        let shaped = || Block::ALL.map(zeros);
        let none = || [None, None, None];
        match kind {
            OptimizerKind::Sgd => OptimizerState {
                kind,
                first: none(),
                second: none(),
                step: 0,
            },
            OptimizerKind::Adagrad => OptimizerState {
                kind,
                first: shaped(),
                second: none(),
                step: 0,
            },
            OptimizerKind::Adam => OptimizerState {
                kind,
                first: shaped(),
                second: shaped(),
                step: 0,
            },
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Accumulator table for `block` (Adagrad sums / Adam first moments).
    pub fn accumulator(&self, block: Block) -> Option<&[f64]> {
        self.first[slot(block)].as_deref()
    }

    pub fn all_finite(&self) -> bool {
        self.first
            .iter()
            .chain(&self.second)
            .flatten()
            .all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Applies one update. Fails without modifying anything if a gradient
    /// entry is non-finite.
    pub fn step(
        &mut self,
        model: &mut EmbeddingModel,
        grads: &Gradients,
        learning_rate: f64,
    ) -> Result<()> {
        let width = model.width();
        for block in Block::ALL {
            for (&row, g) in grads.block(block) {
                if g.len() != width || model.block(block).is_none() {
                    return Err(Error::InvalidArgument(format!(
                        "gradient for {} row {row} does not match the model",
                        block.name()
                    )));
                }
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteGradient {
                        block: block.name(),
                        row,
                    });
                }
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - ADAM_BETA1.powi(t);
        let bias2 = 1.0 - ADAM_BETA2.powi(t);
        for block in Block::ALL {
            let s = slot(block);
            for (&row, g) in grads.block(block) {
                if g.iter().all(|&v| v == 0.0) {
                    continue;
                }
                let range = row * width..(row + 1) * width;
                let params = &mut model.row_mut(block, row)[..];
                match self.kind {
                    OptimizerKind::Sgd => {
                        for (p, gv) in params.iter_mut().zip(g) {
                            *p -= learning_rate * gv;
                        }
                    }
                    OptimizerKind::Adagrad => {
                        let acc = &mut self.first[s].as_mut().expect("adagrad state")[range];
                        for ((p, a), gv) in params.iter_mut().zip(acc.iter_mut()).zip(g) {
                            *a += gv * gv;
                            *p -= learning_rate * gv / (a.sqrt() + ADAGRAD_EPS);
                        }
                    }
                    OptimizerKind::Adam => {
                        let m = &mut self.first[s].as_mut().expect("adam state")[range.clone()];
                        let v = &mut self.second[s].as_mut().expect("adam state")[range];
                        for (((p, mi), vi), gv) in
                            params.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g)
                        {
                            *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * gv;
                            *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * gv * gv;
                            let m_hat = *mi / bias1;
                            let v_hat = *vi / bias2;
                            *p -= learning_rate * m_hat / (v_hat.sqrt() + ADAM_EPS);
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelKind;

    fn scalar_model(v: f64) -> EmbeddingModel {
        EmbeddingModel::from_parts(ModelKind::MF, 1, 2, 1, vec![v, 7.0], None, None).unwrap()
    }

    fn grad(v: f64) -> Gradients {
        let mut g = Gradients::new();
        g.entity.insert(0, vec![v]);
        g
    }

    #[test]
    fn sgd_step() {
        let mut m = scalar_model(1.0);
        let mut st = OptimizerState::new(OptimizerKind::Sgd, &m);
        st.step(&mut m, &grad(2.0), 0.1).unwrap();
        assert!((m.row(Block::Entity, 0)[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_moves_by_lr_times_sign() {
        for g in [3.5, -0.02, 1e3] {
            let mut m = scalar_model(0.0);
            let mut st = OptimizerState::new(OptimizerKind::Adam, &m);
            st.step(&mut m, &grad(g), 0.01).unwrap();
            let delta = m.row(Block::Entity, 0)[0];
            assert!(
                (delta + 0.01 * g.signum()).abs() < 1e-8,
                "g={g} delta={delta}"
            );
        }
    }

    #[test]
    fn adagrad_accumulates_and_never_shrinks() {
        let mut m = scalar_model(0.0);
        let mut st = OptimizerState::new(OptimizerKind::Adagrad, &m);
        let mut prev = 0.0;
        for g in [1.0, -2.0, 0.5] {
            st.step(&mut m, &grad(g), 0.1).unwrap();
            let acc = st.accumulator(Block::Entity).unwrap()[0];
            assert!(acc >= prev);
            prev = acc;
        }
        assert_eq!(prev, 1.0 + 4.0 + 0.25);
    }

    #[test]
    fn zero_and_absent_rows_are_untouched() {
        for kind in [
            OptimizerKind::Sgd,
            OptimizerKind::Adagrad,
            OptimizerKind::Adam,
        ] {
            let mut m = scalar_model(0.5);
            let mut st = OptimizerState::new(kind, &m);
            st.step(&mut m, &grad(1.0), 0.1).unwrap();
            let before = m.clone();
            st.step(&mut m, &grad(0.0), 0.1).unwrap();
            assert_eq!(m, before, "{kind}");
            assert_eq!(m.row(Block::Entity, 1)[0].to_bits(), 7.0f64.to_bits());
        }
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut m = scalar_model(0.5);
        let mut st = OptimizerState::new(OptimizerKind::Adam, &m);
        let err = st.step(&mut m, &grad(f64::NAN), 0.1).unwrap_err();
        assert!(matches!(
            err,
            Error::NonFiniteGradient {
                block: "entity",
                row: 0
            }
        ));
        assert_eq!(st.steps(), 0);
        assert_eq!(m, scalar_model(0.5));
    }
}
