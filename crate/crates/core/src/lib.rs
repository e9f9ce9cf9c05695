//! Item recommendation cast as single-relation link prediction.
//!
//! Users and items become entities of a knowledge graph with one
//! `interactsWith` relation. Knowledge-graph embedding models are trained on
//! that graph and used to rank items for each user.

pub mod baselines;
pub mod checkpoint;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod model;
pub mod rng;
pub mod runconfig;
pub mod search;
pub mod train;

pub use error::{Error, Result};
