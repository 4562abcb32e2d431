//! SGD with momentum: a moving average of gradients drives the update.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::optim::adam::check_finite;
use crate::optim::params::{check_groups_match, zeros_like, GroupLayout, ParameterGroups};
use crate::optim::OptimizerConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdMomentumState {
    velocity: Vec<Vec<f64>>,
}

impl SgdMomentumState {
    pub fn new(layout: &GroupLayout) -> Self {
        SgdMomentumState {
            velocity: zeros_like(layout),
        }
    }

    pub fn velocity(&self) -> &[Vec<f64>] {
        &self.velocity
    }
}

/// u <- mu u + g; theta <- theta - alpha u.
pub fn sgd_momentum_step(
    params: &mut ParameterGroups,
    grad: &[Vec<f64>],
    state: &mut SgdMomentumState,
    cfg: &OptimizerConfig,
) -> Result<()> {
    cfg.validate(1)?;
    let layout = params.layout();
    check_groups_match(grad, &layout, "gradient")?;
    check_finite(grad)?;

    for (g_idx, group) in params.groups_mut().iter_mut().enumerate() {
        let u = &mut state.velocity[g_idx];
        let g = &grad[g_idx];
        for k in 0..group.len() {
            u[k] = cfg.momentum * u[k] + g[k];
            group[k] -= cfg.alpha * u[k];
        }
    }
    Ok(())
}
