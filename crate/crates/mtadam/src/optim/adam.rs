//! Single-objective Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::params::{check_groups_match, zeros_like, GroupLayout, ParameterGroups};
use crate::optim::OptimizerConfig;

/// First/second moment arrays matching the parameter layout, plus the step
/// counter used for bias correction. Zero-initialized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new(layout: &GroupLayout) -> Self {
        AdamState {
            m: zeros_like(layout),
            v: zeros_like(layout),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self) -> &[Vec<f64>] {
        &self.m
    }

    pub fn second_moment(&self) -> &[Vec<f64>] {
        &self.v
    }
}

/// One Adam iteration:
/// m <- b1 m + (1-b1) g; v <- b2 v + (1-b2) g^2;
/// theta <- theta - alpha * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps).
pub fn adam_step(
    params: &mut ParameterGroups,
    grad: &[Vec<f64>],
    state: &mut AdamState,
    cfg: &OptimizerConfig,
) -> Result<()> {
    cfg.validate(1)?;
    let layout = params.layout();
    check_groups_match(grad, &layout, "gradient")?;
    check_finite(grad)?;

    state.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.t as i32);

    for (g_idx, group) in params.groups_mut().iter_mut().enumerate() {
        let m = &mut state.m[g_idx];
        let v = &mut state.v[g_idx];
        let g = &grad[g_idx];
        for k in 0..group.len() {
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            group[k] -= cfg.alpha * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

pub(crate) fn check_finite(grad: &[Vec<f64>]) -> Result<()> {
    for (g, group) in grad.iter().enumerate() {
        if let Some(bad) = group.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient group {g} contains {bad}")));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_params(theta: f64) -> ParameterGroups {
        ParameterGroups::new(vec![("theta".into(), vec![theta])]).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = scalar_params(1.5);
        let mut st = AdamState::new(&p.layout());
        let cfg = OptimizerConfig::default();
        for _ in 0..5 {
            adam_step(&mut p, &[vec![0.0]], &mut st, &cfg).unwrap();
        }
        assert_eq!(p.group(0)[0], 1.5);
        assert_eq!(st.step_count(), 5);
    }

    #[test]
    fn one_step_matches_hand_arithmetic() {
        // theta0=1, g=1, defaults: theta1 = 1 - 0.001 * 1/(1 + 1e-8).
        let mut p = scalar_params(1.0);
        let mut st = AdamState::new(&p.layout());
        adam_step(&mut p, &[vec![1.0]], &mut st, &OptimizerConfig::default()).unwrap();
        let expected = 1.0 - 0.001 * 1.0 / (1.0 + 1e-8);
        assert!((p.group(0)[0] - expected).abs() < 1e-15);
        assert!((p.group(0)[0] - 0.999).abs() < 1e-10);
    }

    #[test]
    fn bias_correction_cancels_warmup_under_constant_gradient() {
        // With g constant, m_hat_t = g and v_hat_t = g^2 exactly, so every
        // step is alpha * g / (|g| + eps).
        let g = -2.5;
        let cfg = OptimizerConfig::default();
        let mut p = scalar_params(0.0);
        let mut st = AdamState::new(&p.layout());
        let mut prev = 0.0;
        for t in 1..=50 {
            adam_step(&mut p, &[vec![g]], &mut st, &cfg).unwrap();
            let m_hat = st.m[0][0] / (1.0 - cfg.beta1.powi(t));
            let v_hat = st.v[0][0] / (1.0 - cfg.beta2.powi(t));
            assert!((m_hat - g).abs() < 1e-12 * g.abs(), "t={t} m_hat={m_hat}");
            assert!((v_hat - g * g).abs() < 1e-12 * g * g, "t={t} v_hat={v_hat}");
            let step = p.group(0)[0] - prev;
            let expected = -cfg.alpha * g / (g.abs() + cfg.eps);
            assert!((step - expected).abs() < 1e-12, "t={t} step={step}");
            prev = p.group(0)[0];
        }
    }

    #[test]
    fn rejects_shape_mismatch_and_non_finite() {
        let mut p = scalar_params(1.0);
        let mut st = AdamState::new(&p.layout());
        let cfg = OptimizerConfig::default();
        assert!(adam_step(&mut p, &[vec![1.0, 2.0]], &mut st, &cfg).is_err());
        assert!(adam_step(&mut p, &[vec![f64::NAN]], &mut st, &cfg).is_err());
        // failed calls must not advance the step counter
        assert_eq!(st.step_count(), 0);
    }
}
