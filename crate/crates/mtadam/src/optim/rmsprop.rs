//! RMSProp: learning rate divided by a moving average of the squared
//! gradient, smoothing constant 0.99.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::optim::adam::check_finite;
use crate::optim::params::{check_groups_match, zeros_like, GroupLayout, ParameterGroups};
use crate::optim::OptimizerConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmsPropState {
    square_avg: Vec<Vec<f64>>,
}

impl RmsPropState {
    pub fn new(layout: &GroupLayout) -> Self {
        RmsPropState {
            square_avg: zeros_like(layout),
        }
    }

    pub fn square_avg(&self) -> &[Vec<f64>] {
        &self.square_avg
    }
}

/// v <- s v + (1-s) g^2; theta <- theta - alpha * g / (sqrt(v) + eps).
pub fn rmsprop_step(
    params: &mut ParameterGroups,
    grad: &[Vec<f64>],
    state: &mut RmsPropState,
    cfg: &OptimizerConfig,
) -> Result<()> {
    cfg.validate(1)?;
    let layout = params.layout();
    check_groups_match(grad, &layout, "gradient")?;
    check_finite(grad)?;

    for (g_idx, group) in params.groups_mut().iter_mut().enumerate() {
        let v = &mut state.square_avg[g_idx];
        let g = &grad[g_idx];
        for k in 0..group.len() {
            v[k] = cfg.smoothing * v[k] + (1.0 - cfg.smoothing) * g[k] * g[k];
            group[k] -= cfg.alpha * g[k] / (v[k].sqrt() + cfg.eps);
        }
    }
    Ok(())
}
