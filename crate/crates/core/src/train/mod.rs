//! Losses, regularizers, samplers, optimizers and the fit loop.

pub mod config;
pub mod engine;
pub mod loss;
pub mod optimizer;
pub mod regularizer;
pub mod sampler;

pub use config::{compatible, LossKind, OptimizerKind, RegularizerKind, Strategy, TrainingConfig};
pub use engine::{
    epoch_examples, fit, objective, train_epoch, EpochRecord, Example, FitOutcome, NoValidation,
    TrainingData, Validator,
};
pub use optimizer::OptimizerState;
pub use sampler::EntityLayout;
