//! Maximum-likelihood estimates for the Gaussian model.

use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{sample_observations, GaussianMeanModel, Hypothesis, ObservationBlock};
use crate::rng::derive_seed;

/// Per-node estimates using only that node's samples.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalEstimates {
    pub means: Vec<f64>,
    /// MLE variances (divisor `L`); present only when the covariance is
    /// unknown.
    pub variances: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalEstimates {
    pub mean: DVector<f64>,
    /// Sample covariance with divisor `L`; present only when the covariance
    /// is unknown.
    pub cov: Option<DMatrix<f64>>,
}

/// Row averages `(1/L) sum_l z_k(l)`. Shared by the local and global
/// estimators so both return bit-identical means.
pub(crate) fn sample_mean(obs: &ObservationBlock) -> Vec<f64> {
    let l = obs.n_slots() as f64;
    let data = obs.data();
    (0..obs.n_sensors())
        .map(|k| data.row(k).iter().sum::<f64>() / l)
        .collect()
}

/// `(1/L) sum_l (x_l - center)^2`.
pub(crate) fn mean_square_about(row: impl Iterator<Item = f64>, center: f64, l: usize) -> f64 {
    row.map(|x| (x - center) * (x - center)).sum::<f64>() / l as f64
}

/// A variance this small relative to the data scale carries no information.
pub(crate) fn is_degenerate_variance(variance: f64, scale_sq: f64) -> bool {
    variance <= (64.0 * f64::EPSILON).powi(2) * scale_sq.max(f64::MIN_POSITIVE)
}

pub fn local_mle(obs: &ObservationBlock, cov_known: bool) -> Result<LocalEstimates> {
    let means = sample_mean(obs);
    if cov_known {
        return Ok(LocalEstimates {
            means,
            variances: None,
        });
    }
    let l = obs.n_slots();
    if l < 2 {
        return Err(Error::InvalidParameter(
            "variance estimation needs at least 2 slots".into(),
        ));
    }
    let data = obs.data();
    let mut variances = Vec::with_capacity(means.len());
    for (k, &m) in means.iter().enumerate() {
        let v = mean_square_about(data.row(k).iter().copied(), m, l);
        let scale = data.row(k).iter().fold(0.0f64, |s, x| s.max(x * x));
        if is_degenerate_variance(v, scale) {
            return Err(Error::Degenerate(format!(
                "zero sample variance at sensor {k}"
            )));
        }
        variances.push(v);
    }
    Ok(LocalEstimates {
        means,
        variances: Some(variances),
    })
}

/// Sample covariance `(1/L) sum_l (z_l - center)(z_l - center)^T`.
pub(crate) fn scatter_about(obs: &ObservationBlock, center: &[f64]) -> DMatrix<f64> {
    let n = obs.n_sensors();
    let l = obs.n_slots();
    let centered = DMatrix::from_fn(n, l, |k, t| obs.data()[(k, t)] - center[k]);
    (&centered * centered.transpose()) / l as f64
}

pub fn global_mle(obs: &ObservationBlock, cov_known: bool) -> Result<GlobalEstimates> {
    let mean = sample_mean(obs);
    if cov_known {
        return Ok(GlobalEstimates {
            mean: DVector::from_vec(mean),
            cov: None,
        });
    }
    let n = obs.n_sensors();
    if obs.n_slots() < n + 1 {
        return Err(Error::InvalidParameter(format!(
            "covariance estimation needs at least N+1 = {} slots, got {}",
            n + 1,
            obs.n_slots()
        )));
    }
    let cov = scatter_about(obs, &mean);
    if Cholesky::new(cov.clone()).is_none() {
        return Err(Error::Degenerate("sample covariance is singular".into()));
    }
    Ok(GlobalEstimates {
        mean: DVector::from_vec(mean),
        cov: Some(cov),
    })
}

/// Empirical covariance (divisor `n_trials - 1`) of the local mean estimates
/// over `n_trials` independent blocks. Trial `t` is sampled with
/// `derive_seed(seed, t)`; the reduction runs in trial order, so the result
/// does not depend on the thread count.
pub fn empirical_estimator_covariance(
    model: &GaussianMeanModel,
    hypothesis: Hypothesis,
    n_slots: usize,
    n_trials: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    if n_trials < 100 {
        return Err(Error::InvalidParameter(format!(
            "need at least 100 trials, got {n_trials}"
        )));
    }
    let estimates: Vec<Vec<f64>> = (0..n_trials as u64)
        .into_par_iter()
        .map(|t| {
            let obs = sample_observations(model, hypothesis, n_slots, derive_seed(seed, t))?;
            Ok(sample_mean(&obs))
        })
        .collect::<Result<_>>()?;

    let n = model.n_sensors();
    let mut mean = vec![0.0; n];
    for e in &estimates {
        for (m, v) in mean.iter_mut().zip(e) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n_trials as f64;
    }
    let mut cov = DMatrix::zeros(n, n);
    for e in &estimates {
        for i in 0..n {
            let di = e[i] - mean[i];
            for j in 0..=i {
                cov[(i, j)] += di * (e[j] - mean[j]);
            }
        }
    }
    for i in 0..n {
        for j in 0..=i {
            let v = cov[(i, j)] / (n_trials - 1) as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    Ok(cov)
}
