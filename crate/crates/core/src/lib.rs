//! Bernoulli-statistic event graphs for multi-label medication recommendation.
//!
//! Sparse binary patient x event matrices are turned into continuous node
//! values (empirical Bernoulli means) and conditional-probability edge weights,
//! one graph per patient, and classified by an edge-featured message-passing
//! network. The crate also carries the ablation encodings, logistic-regression
//! and MLP baselines, example-based metrics with bootstrap evaluation, and a
//! noisy-OR cohort simulator used for end-to-end checks.
//!
//! Model code is generic over [`Scalar`] (`f32` or `f64`); the aliases below
//! name the common instantiations.

pub mod baselines;
pub mod checkpoint;
pub mod cohort;
pub mod encoders;
pub mod error;
pub mod experiment;
pub mod fsutil;
pub mod gnn;
pub mod graph;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod scalar;
pub mod sparse;
pub mod stats;
pub mod synth;
pub mod train;
pub mod viz;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type ModelParams64 = gnn::ModelParams<f64>;
pub type ModelParams32 = gnn::ModelParams<f32>;
pub type AdamState64 = optim::AdamState<f64>;
pub type AdamState32 = optim::AdamState<f32>;
