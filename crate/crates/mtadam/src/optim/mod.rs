//! Optimizer step functions over the parameter-group abstraction.
//!
//! All optimizers share [`OptimizerConfig`] and operate in 64-bit floats.
//! State is owned by one training run and mutated in place; step functions
//! are single-threaded and deterministic.

mod adam;
pub mod checkpoint;
mod mtadam;
mod params;
mod rmsprop;
mod sgd;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adam::{adam_step, AdamState};
pub use mtadam::{
    max_variance_denominator, mtadam_step, normalize_term_gradients, MtAdamState, StepDiagnostics,
};
pub use params::{GroupLayout, ParameterGroups, TermGradients};
pub use rmsprop::{rmsprop_step, RmsPropState};
pub use sgd::{sgd_momentum_step, SgdMomentumState};

/// Default smoothing constant for RMSProp (pytorch default).
pub const DEFAULT_RMSPROP_SMOOTHING: f64 = 0.99;
/// Default momentum for SGD-momentum (pytorch default).
pub const DEFAULT_SGD_MOMENTUM: f64 = 0.9;

/// MTAdam update-rule variants. `Full` is the complete method; the others
/// each disable or replace exactly one ingredient.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MtAdamVariant {
    /// Per-layer magnitude balancing, anchor scaling, max-variance step.
    Full,
    /// No magnitude tracking or rescaling at all.
    NoLayerNorm,
    /// One whole-network magnitude per term instead of per-layer.
    GlobalNorm,
    /// Divide by the term's own magnitude; no anchor numerator.
    NoAnchorScale,
    /// Each term's step divided by its own second moment.
    PerTermVariance,
    /// Mean of the per-term second moments instead of the max.
    MeanVariance,
}

impl MtAdamVariant {
    pub const ALL: [MtAdamVariant; 6] = [
        MtAdamVariant::Full,
        MtAdamVariant::NoLayerNorm,
        MtAdamVariant::GlobalNorm,
        MtAdamVariant::NoAnchorScale,
        MtAdamVariant::PerTermVariance,
        MtAdamVariant::MeanVariance,
    ];
}

impl fmt::Display for MtAdamVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            MtAdamVariant::Full => "full",
            MtAdamVariant::NoLayerNorm => "no_layer_norm",
            MtAdamVariant::GlobalNorm => "global_norm",
            MtAdamVariant::NoAnchorScale => "no_anchor_scale",
            MtAdamVariant::PerTermVariance => "per_term_variance",
            MtAdamVariant::MeanVariance => "mean_variance",
        };
        f.write_str(s)
    }
}

impl FromStr for MtAdamVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(MtAdamVariant::Full),
            "no_layer_norm" => Ok(MtAdamVariant::NoLayerNorm),
            "global_norm" => Ok(MtAdamVariant::GlobalNorm),
            "no_anchor_scale" => Ok(MtAdamVariant::NoAnchorScale),
            "per_term_variance" => Ok(MtAdamVariant::PerTermVariance),
            "mean_variance" => Ok(MtAdamVariant::MeanVariance),
            other => Err(Error::InvalidConfig(format!("unknown variant '{other}'"))),
        }
    }
}

/// Shared hyperparameters for all step functions.
///
/// `alpha`, `beta1`, `beta2`, `eps` drive Adam and MTAdam; `beta3` is the
/// decay of the per-layer gradient-magnitude moving average; `eps_norm`
/// floors the magnitude denominator so a vanished term cannot blow up the
/// rescale; `anchor` selects the term whose magnitude the others are
/// normalized to (the first term by default, which therefore has a
/// distinguished role — callers control term order). `smoothing` and
/// `momentum` belong to RMSProp and SGD-momentum respectively.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub eps: f64,
    pub eps_norm: f64,
    pub anchor: usize,
    pub variant: MtAdamVariant,
    pub smoothing: f64,
    pub momentum: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            alpha: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            beta3: 0.9,
            eps: 1e-8,
            eps_norm: 1e-12,
            anchor: 0,
            variant: MtAdamVariant::Full,
            smoothing: DEFAULT_RMSPROP_SMOOTHING,
            momentum: DEFAULT_SGD_MOMENTUM,
        }
    }
}

impl OptimizerConfig {
    /// Checks ranges; `num_terms` bounds the anchor index.
    pub fn validate(&self, num_terms: usize) -> Result<()> {
        fn beta_ok(name: &str, b: f64) -> Result<()> {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidConfig(format!("{name}={b} not in [0,1)")));
            }
            Ok(())
        }
        beta_ok("beta1", self.beta1)?;
        beta_ok("beta2", self.beta2)?;
        beta_ok("beta3", self.beta3)?;
        beta_ok("momentum", self.momentum)?;
        beta_ok("smoothing", self.smoothing)?;
        if !(self.alpha > 0.0) {
            return Err(Error::InvalidConfig(format!("alpha={} must be > 0", self.alpha)));
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidConfig(format!("eps={} must be > 0", self.eps)));
        }
        if !(self.eps_norm > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "eps_norm={} must be > 0",
                self.eps_norm
            )));
        }
        if self.anchor >= num_terms {
            return Err(Error::InvalidConfig(format!(
                "anchor index {} out of range for {} terms",
                self.anchor, num_terms
            )));
        }
        Ok(())
    }
}
