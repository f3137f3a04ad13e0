//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

use argmin::core::{CostFunction, Error as ArgminError, Executor};
use argmin::solver::neldermead::NelderMead;

/// Two-sensor samples, `rows[k][l]`.
pub type Samples = [Vec<f64>; 2];

/// Gaussian log-likelihood of two-sensor samples, constants dropped.
/// The covariance is `G G^T` with `G = [[exp(a), 0], [b, exp(c)]]`.
fn log_likelihood(samples: &Samples, mean: [f64; 2], chol: [f64; 3]) -> f64 {
    let (g11, g21, g22) = (chol[0].exp(), chol[1], chol[2].exp());
    let l = samples[0].len();
    let mut quad = 0.0;
    for (a, b) in samples[0].iter().zip(&samples[1]) {
        let r0 = a - mean[0];
        let r1 = b - mean[1];
        // forward substitution with G
        let y0 = r0 / g11;
        let y1 = (r1 - g21 * y0) / g22;
        quad += y0 * y0 + y1 * y1;
    }
    -(l as f64) * (chol[0] + chol[2]) - 0.5 * quad
}

struct NegLogLik<'a> {
    samples: &'a Samples,
    fixed_mean: Option<[f64; 2]>,
}

impl CostFunction for NegLogLik<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Self::Param) -> Result<f64, ArgminError> {
        let (mean, chol) = match self.fixed_mean {
            Some(m) => (m, [p[0], p[1], p[2]]),
            None => ([p[3], p[4]], [p[0], p[1], p[2]]),
        };
        Ok(-log_likelihood(self.samples, mean, chol))
    }
}

fn simplex_around(center: &[f64], size: f64) -> Vec<Vec<f64>> {
    let mut simplex = vec![center.to_vec()];
    for i in 0..center.len() {
        let mut v = center.to_vec();
        v[i] += size;
        simplex.push(v);
    }
    simplex
}

/// Maximum log-likelihood by Nelder–Mead with restarts from the best point.
fn maximize(samples: &Samples, fixed_mean: Option<[f64; 2]>) -> f64 {
    let dim = if fixed_mean.is_some() { 3 } else { 5 };
    let mut best = vec![0.0; dim];
    let mut best_value = f64::INFINITY;
    for round in 0..40 {
        let size = if round % 2 == 0 { 0.5 } else { 0.05 };
        let solver = NelderMead::new(simplex_around(&best, size))
            .with_sd_tolerance(1e-15)
            .expect("valid tolerance");
        let problem = NegLogLik {
            samples,
            fixed_mean,
        };
        let result = Executor::new(problem, solver)
            .configure(|s| s.max_iters(20_000))
            .run()
            .expect("optimizer runs");
        let value = result.state.best_cost;
        let improved = best_value - value;
        if value < best_value {
            best_value = value;
            best = result.state.best_param.clone().expect("best point");
        }
        if round >= 4 && improved.abs() < 1e-13 {
            break;
        }
    }
    -best_value
}

/// `2 [max over (mean, cov) - max over cov with mean = theta0]` of the
/// Gaussian log-likelihood, found numerically.
pub fn brute_force_glr_unknown_cov(samples: &Samples, theta0: [f64; 2]) -> f64 {
    2.0 * (maximize(samples, None) - maximize(samples, Some(theta0)))
}
