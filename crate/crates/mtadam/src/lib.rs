//! Multi-term stochastic optimization: MTAdam with per-term moments and
//! per-layer gradient-magnitude balancing, plus Adam, RMSProp, and
//! SGD-momentum baselines, a small MLP training stack, and an experiment
//! harness that runs the unbalanced multi-term MNIST comparison.
//!
//! The crate is organized around a generic parameter-group abstraction:
//! learned parameters are named, ordered groups of flat `f64` arrays
//! ([`ParameterGroups`]), and a multi-term objective produces one gradient
//! set per loss term ([`TermGradients`]). Optimizer step functions mutate
//! parameters and their own state in place and are deterministic given
//! identical inputs.

pub mod data;
pub mod error;
pub mod harness;
pub mod matrix;
pub mod model;
pub mod optim;
pub mod search;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use optim::{
    adam_step, mtadam_step, normalize_term_gradients, rmsprop_step, sgd_momentum_step, AdamState,
    MtAdamState, MtAdamVariant, OptimizerConfig, ParameterGroups, TermGradients,
};

/// Crate version string recorded in run summaries.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
