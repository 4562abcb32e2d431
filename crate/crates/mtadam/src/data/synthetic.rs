//! Synthetic multi-term objectives with closed-form gradients, for fast
//! optimizer tests that do not need a network or data files.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A set of convex quadratics f_i(theta) = c_i |theta - a_i|^2 over a shared
/// parameter vector. The weighted optimum of the sum is known in closed
/// form.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticTask {
    pub dims: usize,
    pub coeffs: Vec<f64>,
    pub centers: Vec<Vec<f64>>,
    /// Minimizer of the unweighted sum of all terms.
    pub optimum: Vec<f64>,
}

impl SyntheticTask {
    pub fn num_terms(&self) -> usize {
        self.coeffs.len()
    }

    pub fn term_loss(&self, term: usize, theta: &[f64]) -> f64 {
        let c = self.coeffs[term];
        c * theta
            .iter()
            .zip(&self.centers[term])
            .map(|(t, a)| (t - a) * (t - a))
            .sum::<f64>()
    }

    /// Closed-form gradient 2 c_i (theta - a_i).
    pub fn term_gradient(&self, term: usize, theta: &[f64]) -> Vec<f64> {
        let c = self.coeffs[term];
        theta
            .iter()
            .zip(&self.centers[term])
            .map(|(t, a)| 2.0 * c * (t - a))
            .collect()
    }

    pub fn total_loss(&self, theta: &[f64]) -> f64 {
        (0..self.num_terms()).map(|i| self.term_loss(i, theta)).sum()
    }
}

/// I quadratics with curvatures drawn log-uniformly over
/// `condition_range` and centers uniform in [-1, 1].
pub fn make_unbalanced_quadratics(
    num_terms: usize,
    dims: usize,
    seed: u64,
    condition_range: (f64, f64),
) -> Result<SyntheticTask> {
    if num_terms < 2 {
        return Err(Error::InvalidConfig("need at least two terms".into()));
    }
    if dims == 0 {
        return Err(Error::InvalidConfig("dims must be positive".into()));
    }
    let (lo, hi) = condition_range;
    if !(lo > 0.0) || !(hi >= lo) {
        return Err(Error::InvalidConfig(format!(
            "condition range ({lo}, {hi}) must satisfy 0 < lo <= hi"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coeffs: Vec<f64> = (0..num_terms)
        .map(|_| {
            let u: f64 = rng.gen_range(0.0..=1.0);
            (lo.ln() + u * (hi.ln() - lo.ln())).exp()
        })
        .collect();
    let centers: Vec<Vec<f64>> = (0..num_terms)
        .map(|_| (0..dims).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();

    // grad sum = sum_i 2 c_i (theta - a_i) = 0  =>  theta = sum c_i a_i / sum c_i
    let coeff_sum: f64 = coeffs.iter().sum();
    let optimum: Vec<f64> = (0..dims)
        .map(|d| {
            coeffs
                .iter()
                .zip(&centers)
                .map(|(c, a)| c * a[d])
                .sum::<f64>()
                / coeff_sum
        })
        .collect();

    Ok(SyntheticTask {
        dims,
        coeffs,
        centers,
        optimum,
    })
}
