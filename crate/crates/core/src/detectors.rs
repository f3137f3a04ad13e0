//! Detection statistics, all reported as `2 log T`.
//!
//! * GLR: the centralized generalized likelihood ratio over the joint pdf.
//! * LMP: the marginal-product statistic, a sum of per-node log-likelihood
//!   ratios that each node computes from its own samples. Its distributed
//!   form runs [`spatial_sum`] over the per-node terms.
//!
//! Detectors only ever see a [`NullModel`]; the alternative mean is not
//! part of their input.

use nalgebra::{Cholesky, DVector};

use crate::consensus::{spatial_sum, TransmissionLedger};
use crate::error::{Error, Result};
use crate::estimators::{is_degenerate_variance, mean_square_about, sample_mean, scatter_about};
use crate::model::{Hypothesis, NullModel, ObservationBlock};
use crate::network::SensorNetwork;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StatisticKind {
    GlrKnownCov,
    GlrUnknownCov,
    LmpKnownCov,
    LmpUnknownCov,
}

impl StatisticKind {
    pub fn glr(cov_known: bool) -> Self {
        if cov_known {
            StatisticKind::GlrKnownCov
        } else {
            StatisticKind::GlrUnknownCov
        }
    }

    pub fn lmp(cov_known: bool) -> Self {
        if cov_known {
            StatisticKind::LmpKnownCov
        } else {
            StatisticKind::LmpUnknownCov
        }
    }

    pub fn is_glr(self) -> bool {
        matches!(
            self,
            StatisticKind::GlrKnownCov | StatisticKind::GlrUnknownCov
        )
    }

    pub fn cov_known(self) -> bool {
        matches!(
            self,
            StatisticKind::GlrKnownCov | StatisticKind::LmpKnownCov
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StatisticKind::GlrKnownCov => "glr-known-cov",
            StatisticKind::GlrUnknownCov => "glr-unknown-cov",
            StatisticKind::LmpKnownCov => "lmp-known-cov",
            StatisticKind::LmpUnknownCov => "lmp-unknown-cov",
        }
    }
}

impl std::fmt::Display for StatisticKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatisticValue {
    pub two_log_value: f64,
    pub kind: StatisticKind,
}

fn check_sensors(obs: &ObservationBlock, expected: usize) -> Result<()> {
    if obs.n_sensors() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            actual: obs.n_sensors(),
        });
    }
    Ok(())
}

fn mean_offset(obs: &ObservationBlock, theta0: &DVector<f64>) -> Result<DVector<f64>> {
    check_sensors(obs, theta0.len())?;
    let mean = sample_mean(obs);
    Ok(DVector::from_fn(mean.len(), |k, _| mean[k] - theta0[k]))
}

/// `L (mean - theta0)^T C^{-1} (mean - theta0)`, through the Cholesky factor.
pub fn glr_known_cov(obs: &ObservationBlock, null: &NullModel) -> Result<StatisticValue> {
    let d = mean_offset(obs, null.theta0())?;
    let y = null
        .cov_cholesky()
        .l_dirty()
        .solve_lower_triangular(&d)
        .ok_or_else(|| Error::NotPositiveDefinite("singular Cholesky factor".into()))?;
    Ok(StatisticValue {
        two_log_value: obs.n_slots() as f64 * y.norm_squared(),
        kind: StatisticKind::GlrKnownCov,
    })
}

/// `L sum_k (mean_k - theta0_k)^2 / C_kk`.
pub fn lmp_known_cov(
    obs: &ObservationBlock,
    theta0: &DVector<f64>,
    cov_diag: &[f64],
) -> Result<StatisticValue> {
    let d = mean_offset(obs, theta0)?;
    if cov_diag.len() != d.len() {
        return Err(Error::DimensionMismatch {
            expected: d.len(),
            actual: cov_diag.len(),
        });
    }
    if let Some(bad) = cov_diag.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "variance must be positive, got {bad}"
        )));
    }
    let sum: f64 = d.iter().zip(cov_diag).map(|(dk, ck)| dk * dk / ck).sum();
    Ok(StatisticValue {
        two_log_value: obs.n_slots() as f64 * sum,
        kind: StatisticKind::LmpKnownCov,
    })
}

/// What a node knows about its own marginal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NodeVariance {
    Known(f64),
    Unknown,
}

/// Per-node log-likelihood ratio `T_k` from the node's own samples.
///
/// Known variance `c`: `T_k = L (mean - theta0)^2 / (2c)`.
/// Unknown variance: `T_k = (L/2) log(s0 / s1)` with `s0` the mean square
/// about `theta0` and `s1` the MLE variance; since `s0 = s1 + (mean - theta0)^2`
/// this is evaluated as `(L/2) log1p((mean - theta0)^2 / s1)`.
pub fn local_term(samples: &[f64], theta0: f64, variance: NodeVariance) -> Result<f64> {
    let l = samples.len();
    if l == 0 {
        return Err(Error::InvalidParameter("node has no samples".into()));
    }
    let mean = samples.iter().sum::<f64>() / l as f64;
    let d = mean - theta0;
    match variance {
        NodeVariance::Known(c) => {
            if !(c > 0.0) || !c.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "variance must be positive, got {c}"
                )));
            }
            Ok(l as f64 * d * d / (2.0 * c))
        }
        NodeVariance::Unknown => {
            if l < 2 {
                return Err(Error::InvalidParameter(
                    "unknown-variance term needs at least 2 samples".into(),
                ));
            }
            let s1 = mean_square_about(samples.iter().copied(), mean, l);
            let scale = samples.iter().fold(0.0f64, |s, x| s.max(x * x));
            if is_degenerate_variance(s1, scale) {
                return Err(Error::Degenerate("zero sample variance at node".into()));
            }
            Ok(0.5 * l as f64 * (d * d / s1).ln_1p())
        }
    }
}

/// `T_k` for every node of the network.
pub fn local_terms(obs: &ObservationBlock, null: &NullModel) -> Result<Vec<f64>> {
    check_sensors(obs, null.n_sensors())?;
    let diag = null.cov_diag();
    (0..obs.n_sensors())
        .map(|k| {
            let variance = if null.cov_known() {
                NodeVariance::Known(diag[k])
            } else {
                NodeVariance::Unknown
            };
            local_term(&obs.row(k), null.theta0()[k], variance)
        })
        .collect()
}

/// Distributed marginal-product statistic: every node computes `T_k`, the
/// network runs `n_it` consensus rounds, and node `k` ends up with
/// `2 N a_k(n_it)`.
pub fn lmp_distributed(
    obs: &ObservationBlock,
    network: &SensorNetwork,
    null: &NullModel,
    n_it: usize,
    ledger: &mut TransmissionLedger,
) -> Result<Vec<StatisticValue>> {
    check_sensors(obs, network.n_nodes())?;
    let terms = local_terms(obs, null)?;
    let sums = spatial_sum(network, &terms, n_it, ledger)?;
    let kind = StatisticKind::lmp(null.cov_known());
    Ok(sums
        .into_iter()
        .map(|s| StatisticValue {
            two_log_value: 2.0 * s,
            kind,
        })
        .collect())
}

fn scatter_cholesky(
    obs: &ObservationBlock,
    center: &[f64],
) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    Cholesky::new(scatter_about(obs, center))
        .ok_or_else(|| Error::Degenerate("sample covariance is singular".into()))
}

fn check_glr_unknown_dims(obs: &ObservationBlock, theta0: &DVector<f64>) -> Result<()> {
    check_sensors(obs, theta0.len())?;
    let n = obs.n_sensors();
    if obs.n_slots() < n + 1 {
        return Err(Error::InvalidParameter(format!(
            "unknown-covariance GLR needs at least N+1 = {} slots, got {}",
            n + 1,
            obs.n_slots()
        )));
    }
    Ok(())
}

/// Gaussian GLR with the full covariance as a nuisance parameter, in
/// Hotelling form `L log(1 + d^T S1^{-1} d)`, `d = mean - theta0`, `S1` the
/// sample covariance about the sample mean.
pub fn glr_unknown_cov(obs: &ObservationBlock, theta0: &DVector<f64>) -> Result<StatisticValue> {
    check_glr_unknown_dims(obs, theta0)?;
    let mean = sample_mean(obs);
    let chol = scatter_cholesky(obs, &mean)?;
    let d = DVector::from_fn(mean.len(), |k, _| mean[k] - theta0[k]);
    let y = chol
        .l_dirty()
        .solve_lower_triangular(&d)
        .ok_or_else(|| Error::Degenerate("sample covariance is singular".into()))?;
    Ok(StatisticValue {
        two_log_value: obs.n_slots() as f64 * y.norm_squared().ln_1p(),
        kind: StatisticKind::GlrUnknownCov,
    })
}

/// The same statistic as [`glr_unknown_cov`] through the determinant ratio
/// `L (log det S0 - log det S1)`, with `S0` the scatter about `theta0`.
pub fn glr_unknown_cov_det_ratio(obs: &ObservationBlock, theta0: &DVector<f64>) -> Result<f64> {
    check_glr_unknown_dims(obs, theta0)?;
    let mean = sample_mean(obs);
    let log_det = |c: &Cholesky<f64, nalgebra::Dyn>| -> f64 {
        2.0 * c.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
    };
    let s1 = scatter_cholesky(obs, &mean)?;
    let s0 = scatter_cholesky(obs, theta0.as_slice())?;
    Ok(obs.n_slots() as f64 * (log_det(&s0) - log_det(&s1)))
}

/// Centralized marginal-product statistic with per-node unknown variances:
/// `L sum_k log(1 + (mean_k - theta0_k)^2 / s1_k)`.
pub fn lmp_unknown_cov(obs: &ObservationBlock, theta0: &DVector<f64>) -> Result<StatisticValue> {
    check_sensors(obs, theta0.len())?;
    let l = obs.n_slots();
    if l < 2 {
        return Err(Error::InvalidParameter(
            "unknown-variance statistic needs at least 2 slots".into(),
        ));
    }
    let mean = sample_mean(obs);
    let data = obs.data();
    let mut sum = 0.0;
    for k in 0..obs.n_sensors() {
        let s1 = mean_square_about(data.row(k).iter().copied(), mean[k], l);
        let scale = data.row(k).iter().fold(0.0f64, |s, x| s.max(x * x));
        if is_degenerate_variance(s1, scale) {
            return Err(Error::Degenerate(format!(
                "zero sample variance at sensor {k}"
            )));
        }
        let d = mean[k] - theta0[k];
        sum += (d * d / s1).ln_1p();
    }
    Ok(StatisticValue {
        two_log_value: l as f64 * sum,
        kind: StatisticKind::LmpUnknownCov,
    })
}

/// Centralized evaluation of any of the four statistics.
pub fn centralized_statistic(
    kind: StatisticKind,
    obs: &ObservationBlock,
    null: &NullModel,
) -> Result<StatisticValue> {
    match kind {
        StatisticKind::GlrKnownCov => glr_known_cov(obs, null),
        StatisticKind::GlrUnknownCov => glr_unknown_cov(obs, null.theta0()),
        StatisticKind::LmpKnownCov => lmp_known_cov(obs, null.theta0(), &null.cov_diag()),
        StatisticKind::LmpUnknownCov => lmp_unknown_cov(obs, null.theta0()),
    }
}

/// Threshold test; a statistic equal to `gamma` decides `H1`.
pub fn decide(statistic: f64, gamma: f64) -> Hypothesis {
    if statistic >= gamma {
        Hypothesis::H1
    } else {
        Hypothesis::H0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{sample_observations, GaussianMeanModel};
    use crate::network::generate_geometric_network;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn white(n: usize) -> NullModel {
        NullModel::new(DVector::zeros(n), DMatrix::identity(n, n), true).unwrap()
    }

    #[test]
    fn zero_data_gives_zero() {
        let obs = ObservationBlock::new(DMatrix::zeros(3, 5)).unwrap();
        let null = white(3);
        assert_eq!(glr_known_cov(&obs, &null).unwrap().two_log_value, 0.0);
        assert_eq!(
            lmp_known_cov(&obs, null.theta0(), &[1.0; 3])
                .unwrap()
                .two_log_value,
            0.0
        );
    }

    #[test]
    fn glr_hand_value() {
        let obs = ObservationBlock::from_rows(&[vec![3.0], vec![4.0]]).unwrap();
        assert_relative_eq!(
            glr_known_cov(&obs, &white(2)).unwrap().two_log_value,
            25.0,
            max_relative = 1e-15
        );
    }

    #[test]
    fn lmp_hand_value() {
        let obs = ObservationBlock::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let v = lmp_known_cov(&obs, &DVector::zeros(2), &[1.0, 4.0]).unwrap();
        assert_relative_eq!(v.two_log_value, 2.5, max_relative = 1e-15);
        assert_eq!(v.kind, StatisticKind::LmpKnownCov);
    }

    #[test]
    fn lmp_rejects_nonpositive_variance() {
        let obs = ObservationBlock::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        assert!(lmp_known_cov(&obs, &DVector::zeros(2), &[1.0, 0.0]).is_err());
        assert!(lmp_known_cov(&obs, &DVector::zeros(2), &[1.0]).is_err());
    }

    #[test]
    fn identity_covariance_makes_statistics_equal() {
        let model = GaussianMeanModel::toeplitz(0.0, &[0.2, 0.1, 0.3], true).unwrap();
        let obs = sample_observations(&model, Hypothesis::H1, 20, 3).unwrap();
        let null = model.null_model();
        let g = glr_known_cov(&obs, null).unwrap().two_log_value;
        let l = lmp_known_cov(&obs, null.theta0(), &null.cov_diag())
            .unwrap()
            .two_log_value;
        assert_relative_eq!(g, l, max_relative = 1e-12);
    }

    #[test]
    fn nonzero_theta0_is_subtracted() {
        let theta0 = DVector::from_vec(vec![1.0, -1.0]);
        let null = NullModel::new(theta0.clone(), DMatrix::identity(2, 2), true).unwrap();
        let obs = ObservationBlock::from_rows(&[vec![1.0, 1.0], vec![-1.0, -1.0]]).unwrap();
        assert_eq!(glr_known_cov(&obs, &null).unwrap().two_log_value, 0.0);
    }

    #[test]
    fn local_terms_known_variance() {
        assert_eq!(
            local_term(&[0.5, 0.5, 0.5], 0.5, NodeVariance::Known(2.0)).unwrap(),
            0.0
        );
        let model = GaussianMeanModel::toeplitz(0.3, &[0.2, 0.4, 0.1, 0.3], true).unwrap();
        let obs = sample_observations(&model, Hypothesis::H1, 20, 6).unwrap();
        let null = model.null_model();
        let terms = local_terms(&obs, null).unwrap();
        let lmp = lmp_known_cov(&obs, null.theta0(), &null.cov_diag())
            .unwrap()
            .two_log_value;
        assert_relative_eq!(2.0 * terms.iter().sum::<f64>(), lmp, max_relative = 1e-12);
    }

    #[test]
    fn local_term_unknown_variance_hand_value() {
        let t = local_term(&[0.0, 2.0], 0.0, NodeVariance::Unknown).unwrap();
        assert_relative_eq!(t, std::f64::consts::LN_2, max_relative = 1e-15);
    }

    #[test]
    fn local_term_variance_identity() {
        let samples = [0.3, -1.2, 0.8, 2.0, 0.1];
        let theta0 = 0.25;
        let l = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / l;
        let s0 = samples.iter().map(|x| (x - theta0).powi(2)).sum::<f64>() / l;
        let s1 = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / l;
        assert_relative_eq!(s0, s1 + (mean - theta0).powi(2), max_relative = 1e-14);
        let t = local_term(&samples, theta0, NodeVariance::Unknown).unwrap();
        assert_relative_eq!(t, 0.5 * l * (s0 / s1).ln(), max_relative = 1e-13);
    }

    #[test]
    fn local_term_errors() {
        assert!(matches!(
            local_term(&[1.0, 1.0, 1.0], 1.0, NodeVariance::Unknown),
            Err(Error::Degenerate(_))
        ));
        assert!(local_term(&[1.0], 0.0, NodeVariance::Unknown).is_err());
        assert!(local_term(&[], 0.0, NodeVariance::Known(1.0)).is_err());
        assert!(local_term(&[1.0], 0.0, NodeVariance::Known(-1.0)).is_err());
    }

    #[test]
    fn distributed_matches_centralized_after_many_rounds() {
        let theta = [0.24, 0.37, 0.24, 0.38, 0.30, 0.32, 0.35, 0.30, 0.26, 0.24];
        let model = GaussianMeanModel::toeplitz(0.3, &theta, true).unwrap();
        let net = generate_geometric_network(10, 20, 100.0, 7).unwrap();
        let obs = sample_observations(&model, Hypothesis::H1, 20, 9).unwrap();
        let null = model.null_model();
        let central = lmp_known_cov(&obs, null.theta0(), &null.cov_diag())
            .unwrap()
            .two_log_value;
        let mut ledger = TransmissionLedger::new(10);
        let per_node = lmp_distributed(&obs, &net, null, 300, &mut ledger).unwrap();
        for v in &per_node {
            assert_relative_eq!(v.two_log_value, central, max_relative = 1e-6);
        }
        assert_eq!(ledger.total_broadcasts(), 3000);
    }

    #[test]
    fn single_node_distributed_is_exact() {
        let net = SensorNetwork::new(1.0, vec![[0.0, 0.0]], &[]).unwrap();
        let null =
            NullModel::new(DVector::zeros(1), DMatrix::from_element(1, 1, 2.0), true).unwrap();
        let obs = ObservationBlock::from_rows(&[vec![1.0, 2.0, 0.5]]).unwrap();
        let t = local_terms(&obs, &null).unwrap()[0];
        let mut ledger = TransmissionLedger::new(1);
        let v = lmp_distributed(&obs, &net, &null, 4, &mut ledger).unwrap();
        assert_eq!(v[0].two_log_value, 2.0 * t);
        assert_eq!(ledger.total_broadcasts(), 4);
    }

    #[test]
    fn glr_unknown_is_zero_at_null_mean() {
        let obs =
            ObservationBlock::from_rows(&[vec![1.0, -1.0, 0.5, -0.5], vec![0.2, 0.3, -0.1, -0.4]])
                .unwrap();
        let v = glr_unknown_cov(&obs, &DVector::zeros(2))
            .unwrap()
            .two_log_value;
        assert!(v.abs() < 1e-15, "{v}");
        let det = glr_unknown_cov_det_ratio(&obs, &DVector::zeros(2)).unwrap();
        assert!(det.abs() < 1e-12, "{det}");
    }

    #[test]
    fn glr_unknown_two_routes_agree() {
        let model = GaussianMeanModel::toeplitz(0.5, &[0.3, -0.2, 0.4], false).unwrap();
        for seed in 0..20 {
            let obs = sample_observations(&model, Hypothesis::H1, 12, seed).unwrap();
            let a = glr_unknown_cov(&obs, model.theta0()).unwrap().two_log_value;
            let b = glr_unknown_cov_det_ratio(&obs, model.theta0()).unwrap();
            assert_relative_eq!(a, b, max_relative = 1e-10);
        }
    }

    #[test]
    fn glr_unknown_needs_enough_slots() {
        let obs = ObservationBlock::new(DMatrix::from_fn(3, 3, |i, j| (i * 3 + j) as f64)).unwrap();
        assert!(matches!(
            glr_unknown_cov(&obs, &DVector::zeros(3)),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn lmp_unknown_rejects_constant_rows() {
        let obs = ObservationBlock::from_rows(&[vec![0.0; 4], vec![0.0; 4]]).unwrap();
        assert!(matches!(
            lmp_unknown_cov(&obs, &DVector::zeros(2)),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn scalar_unknown_variance_statistics_coincide() {
        let obs = ObservationBlock::from_rows(&[vec![0.4, 1.3, -0.2, 0.9, 0.6]]).unwrap();
        let lmp = lmp_unknown_cov(&obs, &DVector::zeros(1))
            .unwrap()
            .two_log_value;
        let glr = glr_unknown_cov(&obs, &DVector::zeros(1))
            .unwrap()
            .two_log_value;
        assert_relative_eq!(lmp, glr, max_relative = 1e-12);
    }

    #[test]
    fn unknown_lmp_is_twice_sum_of_terms() {
        let model = GaussianMeanModel::toeplitz(0.3, &[0.2, 0.4, 0.1], false).unwrap();
        let obs = sample_observations(&model, Hypothesis::H1, 20, 2).unwrap();
        let terms = local_terms(&obs, model.null_model()).unwrap();
        let lmp = lmp_unknown_cov(&obs, model.theta0()).unwrap().two_log_value;
        assert_relative_eq!(2.0 * terms.iter().sum::<f64>(), lmp, max_relative = 1e-12);
    }

    #[test]
    fn decision_rule() {
        assert_eq!(decide(0.5, 1.0), Hypothesis::H0);
        assert_eq!(decide(1.0, 1.0), Hypothesis::H1);
        assert_eq!(decide(2.0, 1.0), Hypothesis::H1);
    }

    #[test]
    fn dispatcher_kinds() {
        let model = GaussianMeanModel::toeplitz(0.3, &[0.2, 0.4, 0.1], false).unwrap();
        let obs = sample_observations(&model, Hypothesis::H1, 20, 2).unwrap();
        for kind in [
            StatisticKind::GlrKnownCov,
            StatisticKind::GlrUnknownCov,
            StatisticKind::LmpKnownCov,
            StatisticKind::LmpUnknownCov,
        ] {
            let v = centralized_statistic(kind, &obs, model.null_model()).unwrap();
            assert_eq!(v.kind, kind);
            assert!(v.two_log_value >= 0.0);
        }
    }
}
