//! Large-sample laws of the detection statistics and their CROC curves.
//!
//! Both statistics are asymptotically `||n||^2` with `n` Gaussian, so each
//! hypothesis is described by a [`QuadFormDistribution`] and tail
//! probabilities come from the Lugannani–Rice saddlepoint formula.

mod quadform;
mod saddlepoint;

use nalgebra::{DMatrix, DVector};

pub use quadform::{CgfValues, QuadFormDistribution, EIGENVALUE_CUTOFF};
pub use saddlepoint::{
    lugannani_rice_ccdf, saddlepoint_ccdf, solve_saddlepoint, LugannaniRiceOrder,
    SADDLEPOINT_MAX_ITER,
};

use crate::detectors::StatisticKind;
use crate::error::{Error, Result};
use crate::model::GaussianMeanModel;

/// Asymptotic laws of one statistic under both hypotheses.
#[derive(Debug, Clone, PartialEq)]
pub struct AsymptoticSpec {
    pub dist_h0: QuadFormDistribution,
    pub dist_h1: QuadFormDistribution,
    pub kind: StatisticKind,
}

/// Per-sensor Fisher information pieces of the marginal likelihood for the
/// means: `i_tilde = D C D` and `D = diag(C)^{-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalFisher {
    pub i_tilde: DMatrix<f64>,
    pub d: DVector<f64>,
}

pub fn marginal_fisher_tilde(cov: &DMatrix<f64>) -> Result<MarginalFisher> {
    let n = cov.nrows();
    if cov.ncols() != n || n == 0 {
        return Err(Error::InvalidParameter(
            "covariance must be square and non-empty".into(),
        ));
    }
    if (0..n).any(|k| !(cov[(k, k)] > 0.0)) {
        return Err(Error::NotPositiveDefinite(
            "covariance diagonal must be positive".into(),
        ));
    }
    let d = DVector::from_fn(n, |k, _| 1.0 / cov[(k, k)]);
    let i_tilde = DMatrix::from_fn(n, n, |i, j| d[i] * cov[(i, j)] * d[j]);
    Ok(MarginalFisher { i_tilde, d })
}

/// Covariance of the stacked local estimates, `(1/L) D^{-1} i_tilde D^{-1}`.
pub fn local_mle_asymptotic_cov(fisher: &MarginalFisher, n_slots: usize) -> Result<DMatrix<f64>> {
    if n_slots == 0 {
        return Err(Error::InvalidParameter("L must be positive".into()));
    }
    let MarginalFisher { i_tilde, d } = fisher;
    Ok(DMatrix::from_fn(
        i_tilde.nrows(),
        i_tilde.ncols(),
        |i, j| i_tilde[(i, j)] / (d[i] * d[j] * n_slots as f64),
    ))
}

/// The marginal-product statistic is `||D^{1/2} sqrt(L) (theta_hat - theta0)||^2`,
/// asymptotically `N(mu, D^{-1/2} i_tilde D^{-1/2})` inside the norm.
pub fn lmp_asymptotic_spec(model: &GaussianMeanModel, n_slots: usize) -> Result<AsymptoticSpec> {
    if n_slots == 0 {
        return Err(Error::InvalidParameter("L must be positive".into()));
    }
    let fisher = marginal_fisher_tilde(model.cov())?;
    let n = model.n_sensors();
    let root_d = fisher.d.map(f64::sqrt);
    let sigma = DMatrix::from_fn(n, n, |i, j| {
        fisher.i_tilde[(i, j)] / (root_d[i] * root_d[j])
    });
    let shift = model.theta1() - model.theta0();
    let root_l = (n_slots as f64).sqrt();
    let mu1 = DVector::from_fn(n, |k, _| root_l * root_d[k] * shift[k]);
    Ok(AsymptoticSpec {
        dist_h0: QuadFormDistribution::new(DVector::zeros(n), sigma.clone())?,
        dist_h1: QuadFormDistribution::new(mu1, sigma)?,
        kind: StatisticKind::lmp(model.cov_known()),
    })
}

/// The GLR statistic is chi-square with `N` degrees of freedom under H0 and
/// noncentral with mean shift `sqrt(L) G^{-1} (theta1 - theta0)` under H1,
/// where `C = G G^T`.
pub fn glr_asymptotic_spec(model: &GaussianMeanModel, n_slots: usize) -> Result<AsymptoticSpec> {
    if n_slots == 0 {
        return Err(Error::InvalidParameter("L must be positive".into()));
    }
    let n = model.n_sensors();
    let shift = model.theta1() - model.theta0();
    let whitened = model
        .cov_factor()
        .solve_lower_triangular(&shift)
        .ok_or_else(|| Error::NotPositiveDefinite("singular covariance factor".into()))?;
    let mu1 = whitened * (n_slots as f64).sqrt();
    Ok(AsymptoticSpec {
        dist_h0: QuadFormDistribution::central_chi_square(n)?,
        dist_h1: QuadFormDistribution::new(mu1, DMatrix::identity(n, n))?,
        kind: StatisticKind::glr(model.cov_known()),
    })
}

pub fn asymptotic_spec(
    model: &GaussianMeanModel,
    n_slots: usize,
    glr: bool,
) -> Result<AsymptoticSpec> {
    if glr {
        glr_asymptotic_spec(model, n_slots)
    } else {
        lmp_asymptotic_spec(model, n_slots)
    }
}

fn deflection_inputs(model: &GaussianMeanModel, n_slots: usize) -> Result<DVector<f64>> {
    if n_slots == 0 {
        return Err(Error::InvalidParameter("L must be positive".into()));
    }
    Ok(model.theta1() - model.theta0())
}

/// `(E1[T] - E0[T])^2 / Var0[T]` for the GLR statistic:
/// `(L s^T C^{-1} s)^2 / (2N)` with `s = theta1 - theta0`.
pub fn deflection_glr(model: &GaussianMeanModel, n_slots: usize) -> Result<f64> {
    let shift = deflection_inputs(model, n_slots)?;
    let solved = model.null_model().cov_cholesky().solve(&shift);
    let energy = n_slots as f64 * shift.dot(&solved);
    Ok(energy * energy / (2.0 * model.n_sensors() as f64))
}

/// Deflection of the marginal-product statistic:
/// `(L sum_k s_k^2 / C_kk)^2 / (2 sum_ij C_ij^2 / (C_ii C_jj))`.
pub fn deflection_lmp(model: &GaussianMeanModel, n_slots: usize) -> Result<f64> {
    let shift = deflection_inputs(model, n_slots)?;
    let cov = model.cov();
    let n = model.n_sensors();
    let energy = n_slots as f64
        * (0..n)
            .map(|k| shift[k] * shift[k] / cov[(k, k)])
            .sum::<f64>();
    let mut trace = 0.0;
    for i in 0..n {
        for j in 0..n {
            trace += cov[(i, j)] * cov[(i, j)] / (cov[(i, i)] * cov[(j, j)]);
        }
    }
    Ok(energy * energy / (2.0 * trace))
}

/// `D_LMP / D_GLR`; independent of `L`.
pub fn deflection_ratio(model: &GaussianMeanModel) -> Result<f64> {
    let glr = deflection_glr(model, 1)?;
    if !(glr > 0.0) {
        return Err(Error::Degenerate(
            "deflection ratio undefined when theta1 = theta0".into(),
        ));
    }
    Ok(deflection_lmp(model, 1)? / glr)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrocPoint {
    pub gamma: f64,
    pub pfa: f64,
    pub pmd: f64,
}

/// Theoretical `(P_FA, P_MD)` on an ascending threshold grid.
///
/// Thresholds at or below zero give `P_FA = 1`, `P_MD = 0`. Small
/// approximation ripples are removed so `P_FA` is nonincreasing and `P_MD`
/// nondecreasing along the grid.
pub fn croc_theoretical(spec: &AsymptoticSpec, gammas: &[f64]) -> Result<Vec<CrocPoint>> {
    if gammas.iter().any(|g| g.is_nan()) {
        return Err(Error::InvalidParameter(
            "threshold grid contains NaN".into(),
        ));
    }
    if gammas.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParameter(
            "threshold grid must be ascending".into(),
        ));
    }
    let mut points = Vec::with_capacity(gammas.len());
    let (mut last_pfa, mut last_pmd) = (1.0f64, 0.0f64);
    for &gamma in gammas {
        let pfa = saddlepoint_ccdf(&spec.dist_h0, gamma)?.min(last_pfa);
        let pmd = (1.0 - saddlepoint_ccdf(&spec.dist_h1, gamma)?).max(last_pmd);
        last_pfa = pfa;
        last_pmd = pmd;
        points.push(CrocPoint { gamma, pfa, pmd });
    }
    Ok(points)
}

/// Threshold `gamma` with `P(Q > gamma) = tail` under `dist`, by bisection
/// on the saddlepoint tail.
pub fn threshold_for_tail(dist: &QuadFormDistribution, tail: f64) -> Result<f64> {
    if !(tail > 0.0 && tail < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "tail probability {tail} not in (0, 1)"
        )));
    }
    let mut lo = dist.offset().max(0.0);
    let mut hi = dist.mean() + dist.variance().sqrt().max(1.0);
    let mut guard = 0;
    while saddlepoint_ccdf(dist, hi)? > tail {
        lo = hi;
        hi *= 2.0;
        guard += 1;
        if guard > 200 {
            return Err(Error::SaddlepointNonConvergence {
                x: hi,
                iterations: guard,
            });
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if saddlepoint_ccdf(dist, mid)? > tail {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * hi.max(1.0) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}
