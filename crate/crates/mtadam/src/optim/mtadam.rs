//! Multi-term Adam.
//!
//! One step, given per-term gradients g^1..g^I over groups 1..L:
//!
//! 1. per term i and group l, update the gradient-magnitude moving average
//!    n[i][l] <- b3 n[i][l] + (1-b3) |g^i_l|_2;
//! 2. rescale g^i_l by n[anchor][l] / max(n[i][l], eps_norm), so every
//!    term's per-layer magnitude tracks the anchor term's;
//! 3. update per-term first/second moments m^i, v^i with b1, b2 and
//!    bias-correct them;
//! 4. theta -= alpha * sum_i mhat^i / (sqrt(elementwise max_i vhat^i) + eps).
//!
//! The per-term contributions in step 4 are accumulated and applied once;
//! the moments are all computed before the update, so the sum is
//! order-independent. Variants replace single ingredients: `NoLayerNorm`
//! skips steps 1-2, `GlobalNorm` tracks one magnitude per term for the whole
//! network, `NoAnchorScale` drops the anchor numerator in step 2,
//! `PerTermVariance` divides each term by its own vhat^i, and `MeanVariance`
//! replaces the max with the mean.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::params::{norm2, GroupLayout, ParameterGroups, TermGradients};
use crate::optim::{MtAdamVariant, OptimizerConfig};

/// Per-term moments, per-(term, group) magnitude averages, step counter.
///
/// Holds exactly I * (2 * total_len) moment scalars plus I * L magnitude
/// scalars. Moments start at zero, magnitudes at one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MtAdamState {
    m: Vec<Vec<Vec<f64>>>,
    v: Vec<Vec<Vec<f64>>>,
    n: Vec<Vec<f64>>,
    t: u64,
}

impl MtAdamState {
    pub fn new(num_terms: usize, layout: &GroupLayout) -> Result<Self> {
        if num_terms == 0 {
            return Err(Error::InvalidConfig("at least one loss term".into()));
        }
        let zeros: Vec<Vec<f64>> = (0..layout.num_groups())
            .map(|g| vec![0.0; layout.len_of(g)])
            .collect();
        Ok(MtAdamState {
            m: vec![zeros.clone(); num_terms],
            v: vec![zeros; num_terms],
            n: vec![vec![1.0; layout.num_groups()]; num_terms],
            t: 0,
        })
    }

    pub fn num_terms(&self) -> usize {
        self.m.len()
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Magnitude moving averages, indexed [term][group].
    pub fn magnitude_moments(&self) -> &[Vec<f64>] {
        &self.n
    }

    pub fn first_moments(&self) -> &[Vec<Vec<f64>>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<Vec<f64>>] {
        &self.v
    }

    /// Total number of f64 scalars held (moments + magnitudes).
    pub fn scalar_count(&self) -> usize {
        let moments: usize = self
            .m
            .iter()
            .chain(self.v.iter())
            .flat_map(|term| term.iter())
            .map(|g| g.len())
            .sum();
        let magnitudes: usize = self.n.iter().map(|t| t.len()).sum();
        moments + magnitudes
    }

    fn check_matches(&self, layout: &GroupLayout, num_terms: usize) -> Result<()> {
        if self.m.len() != num_terms {
            return Err(Error::ShapeMismatch(format!(
                "state has {} terms, gradients have {num_terms}",
                self.m.len()
            )));
        }
        for (i, term) in self.m.iter().enumerate() {
            if term.len() != layout.num_groups()
                || term
                    .iter()
                    .enumerate()
                    .any(|(g, vals)| vals.len() != layout.len_of(g))
            {
                return Err(Error::ShapeMismatch(format!(
                    "state moments for term {i} do not match the parameter layout"
                )));
            }
        }
        if self.n.iter().any(|t| t.len() != layout.num_groups()) {
            return Err(Error::ShapeMismatch(
                "magnitude moments do not match the group count".into(),
            ));
        }
        Ok(())
    }
}

/// Per-step observability data returned by [`mtadam_step`].
#[derive(Clone, Debug, PartialEq)]
pub struct StepDiagnostics {
    /// Gradient norms per term and group before rescaling.
    pub pre_norms: Vec<Vec<f64>>,
    /// Gradient norms per term and group after rescaling.
    pub post_norms: Vec<Vec<f64>>,
    pub denom_min: f64,
    pub denom_max: f64,
    pub denom_mean: f64,
}

/// Updates the magnitude moving averages and rescales the gradients in
/// place. Called once per step inside [`mtadam_step`]; exposed so the
/// normalization can be exercised on its own. Does not touch the step
/// counter. A no-op for `NoLayerNorm`.
pub fn normalize_term_gradients(
    grads: &mut TermGradients,
    state: &mut MtAdamState,
    cfg: &OptimizerConfig,
) -> Result<()> {
    let num_terms = grads.num_terms();
    cfg.validate(num_terms)?;
    if state.num_terms() != num_terms {
        return Err(Error::ShapeMismatch(format!(
            "state has {} terms, gradients have {num_terms}",
            state.num_terms()
        )));
    }
    let num_groups = grads.term(0).len();

    match cfg.variant {
        MtAdamVariant::NoLayerNorm => return Ok(()),
        MtAdamVariant::GlobalNorm => {
            for i in 0..num_terms {
                let global: f64 = grads.term(i)
                    .iter()
                    .map(|g| g.iter().map(|x| x * x).sum::<f64>())
                    .sum::<f64>()
                    .sqrt();
                for g in 0..num_groups {
                    state.n[i][g] = cfg.beta3 * state.n[i][g] + (1.0 - cfg.beta3) * global;
                }
            }
        }
        _ => {
            for i in 0..num_terms {
                for g in 0..num_groups {
                    let norm = norm2(&grads.term(i)[g]);
                    state.n[i][g] = cfg.beta3 * state.n[i][g] + (1.0 - cfg.beta3) * norm;
                }
            }
        }
    }

    for i in 0..num_terms {
        for g in 0..num_groups {
            let denom = state.n[i][g].max(cfg.eps_norm);
            let scale = match cfg.variant {
                MtAdamVariant::NoAnchorScale => 1.0 / denom,
                _ => state.n[cfg.anchor][g] / denom,
            };
            for x in grads.term_mut(i)[g].iter_mut() {
                *x *= scale;
            }
        }
    }
    Ok(())
}

/// Combines bias-corrected second moments into the step denominator's
/// variance array: the element-wise max of all terms for `Full` (and the
/// normalization-only variants), the term's own array for
/// `PerTermVariance`, the element-wise mean for `MeanVariance`.
///
/// All arrays must share one shape with non-negative entries.
pub fn max_variance_denominator(
    vhats: &[Vec<Vec<f64>>],
    term: usize,
    cfg: &OptimizerConfig,
) -> Vec<Vec<f64>> {
    match cfg.variant {
        MtAdamVariant::PerTermVariance => vhats[term].clone(),
        MtAdamVariant::MeanVariance => {
            let inv = 1.0 / vhats.len() as f64;
            let mut out = vhats[0].clone();
            for other in &vhats[1..] {
                for (og, g) in out.iter_mut().zip(other) {
                    for (o, &x) in og.iter_mut().zip(g) {
                        *o += x;
                    }
                }
            }
            for g in out.iter_mut() {
                for o in g.iter_mut() {
                    *o *= inv;
                }
            }
            out
        }
        _ => {
            let mut out = vhats[0].clone();
            for other in &vhats[1..] {
                for (og, g) in out.iter_mut().zip(other) {
                    for (o, &x) in og.iter_mut().zip(g) {
                        *o = o.max(x);
                    }
                }
            }
            out
        }
    }
}

/// One MTAdam iteration. Consumes the gradients (they are rescaled
/// internally), mutates parameters and state in place, and reports
/// pre/post-normalization norms and denominator statistics.
pub fn mtadam_step(
    params: &mut ParameterGroups,
    mut grads: TermGradients,
    state: &mut MtAdamState,
    cfg: &OptimizerConfig,
) -> Result<StepDiagnostics> {
    let layout = params.layout();
    let num_terms = grads.num_terms();
    cfg.validate(num_terms)?;
    state.check_matches(&layout, num_terms)?;
    for (i, term) in grads.terms().iter().enumerate() {
        crate::optim::params::check_groups_match(term, &layout, &format!("gradient term {i}"))?;
    }
    grads.check_finite()?;

    let pre_norms = all_norms(&grads);
    state.t += 1;
    normalize_term_gradients(&mut grads, state, cfg)?;
    let post_norms = all_norms(&grads);

    let bc1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.t as i32);

    // Moment updates, one cache-friendly pass per term.
    for i in 0..num_terms {
        for g in 0..layout.num_groups() {
            let m = &mut state.m[i][g];
            let v = &mut state.v[i][g];
            let grad = &grads.term(i)[g];
            for k in 0..m.len() {
                let x = grad[k];
                m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * x;
                v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * x * x;
            }
        }
    }

    // Accumulated update. The bias-corrected moments only depend on state
    // already computed, so term order does not matter beyond float rounding.
    let mut denom_min = f64::INFINITY;
    let mut denom_max = f64::NEG_INFINITY;
    let mut denom_sum = 0.0;
    let mut denom_count = 0usize;

    for (g, group) in params.groups_mut().iter_mut().enumerate() {
        for k in 0..group.len() {
            match cfg.variant {
                MtAdamVariant::PerTermVariance => {
                    let mut delta = 0.0;
                    for i in 0..num_terms {
                        let m_hat = state.m[i][g][k] / bc1;
                        let v_hat = state.v[i][g][k] / bc2;
                        let denom = v_hat.sqrt() + cfg.eps;
                        denom_min = denom_min.min(denom);
                        denom_max = denom_max.max(denom);
                        denom_sum += denom;
                        denom_count += 1;
                        delta += m_hat / denom;
                    }
                    group[k] -= cfg.alpha * delta;
                }
                MtAdamVariant::MeanVariance => {
                    let mut m_sum = 0.0;
                    let mut v_sum = 0.0;
                    for i in 0..num_terms {
                        m_sum += state.m[i][g][k];
                        v_sum += state.v[i][g][k];
                    }
                    let m_hat = m_sum / bc1;
                    let v_hat = v_sum / (num_terms as f64) / bc2;
                    let denom = v_hat.sqrt() + cfg.eps;
                    denom_min = denom_min.min(denom);
                    denom_max = denom_max.max(denom);
                    denom_sum += denom;
                    denom_count += 1;
                    group[k] -= cfg.alpha * m_hat / denom;
                }
                _ => {
                    let mut m_sum = 0.0;
                    let mut v_max = f64::NEG_INFINITY;
                    for i in 0..num_terms {
                        m_sum += state.m[i][g][k];
                        v_max = v_max.max(state.v[i][g][k]);
                    }
                    let m_hat = m_sum / bc1;
                    let v_hat = v_max / bc2;
                    let denom = v_hat.sqrt() + cfg.eps;
                    denom_min = denom_min.min(denom);
                    denom_max = denom_max.max(denom);
                    denom_sum += denom;
                    denom_count += 1;
                    group[k] -= cfg.alpha * m_hat / denom;
                }
            }
        }
    }

    Ok(StepDiagnostics {
        pre_norms,
        post_norms,
        denom_min,
        denom_max,
        denom_mean: denom_sum / denom_count as f64,
    })
}

fn all_norms(grads: &TermGradients) -> Vec<Vec<f64>> {
    grads
        .terms()
        .iter()
        .map(|term| term.iter().map(|g| norm2(g)).collect())
        .collect()
}
