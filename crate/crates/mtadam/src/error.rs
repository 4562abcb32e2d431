use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the optimizer, model, data, search, and harness layers.
#[derive(Debug, Error)]
pub enum Error {
    /// Structural mismatch between parameters, gradients, or optimizer state.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A NaN or infinity reached an operation that requires finite inputs.
    #[error("non-finite input: {0}")]
    NonFinite(String),

    /// Invalid configuration value or combination.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// The forward cache no longer matches the current parameters.
    #[error("stale forward cache: parameters were mutated since the forward pass")]
    StaleCache,

    /// Malformed IDX file.
    #[error("idx format error in {path}: {reason}")]
    IdxFormat { path: PathBuf, reason: String },

    /// A training run produced a non-finite loss and was aborted.
    #[error("run diverged at step {step}: {reason}")]
    Diverged { step: u64, reason: String },

    /// Every trial of a hyperparameter search failed.
    #[error("all {0} search trials failed")]
    AllTrialsFailed(usize),

    /// Checkpoint payload is unreadable or from an unsupported version.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
