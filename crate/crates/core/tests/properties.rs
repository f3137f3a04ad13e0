use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use wsn_detect::asymptotics::{saddlepoint_ccdf, solve_saddlepoint, QuadFormDistribution};
use wsn_detect::consensus::ConsensusTrace;
use wsn_detect::detectors::{
    glr_known_cov, glr_unknown_cov, glr_unknown_cov_det_ratio, lmp_known_cov, lmp_unknown_cov,
};
use wsn_detect::model::{build_toeplitz_cov, sample_observations, GaussianMeanModel, Hypothesis};
use wsn_detect::network::{generate_geometric_network, SensorNetwork};
use wsn_detect::ObservationBlock;

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300)
}

/// A block sampled from a Toeplitz model, with its null mean.
fn block(n: usize, l: usize, rho: f64, seed: u64) -> (ObservationBlock, GaussianMeanModel) {
    let theta: Vec<f64> = (0..n).map(|k| 0.1 * k as f64).collect();
    let model = GaussianMeanModel::toeplitz(rho, &theta, false).unwrap();
    (
        sample_observations(&model, Hypothesis::H1, l, seed).unwrap(),
        model,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn toeplitz_is_symmetric_positive_definite(rho in -0.95f64..0.95, n in 1usize..15) {
        let c = build_toeplitz_cov(rho, n).unwrap();
        prop_assert_eq!(&c, &c.transpose());
        prop_assert!(c.clone().cholesky().is_some());
        for k in 0..n {
            prop_assert_eq!(c[(k, k)], 1.0);
        }
    }

    #[test]
    fn statistics_are_nonnegative(seed in any::<u64>(), rho in -0.6f64..0.9) {
        let (obs, model) = block(4, 12, rho, seed);
        let null = model.null_model();
        let theta0 = null.theta0();
        prop_assert!(glr_known_cov(&obs, null).unwrap().two_log_value >= 0.0);
        prop_assert!(lmp_known_cov(&obs, theta0, &null.cov_diag()).unwrap().two_log_value >= 0.0);
        prop_assert!(glr_unknown_cov(&obs, theta0).unwrap().two_log_value >= 0.0);
        prop_assert!(lmp_unknown_cov(&obs, theta0).unwrap().two_log_value >= 0.0);
    }

    #[test]
    fn statistics_are_shift_equivariant(seed in any::<u64>(), shift in prop::collection::vec(-5.0f64..5.0, 3)) {
        let (obs, model) = block(3, 10, 0.4, seed);
        let moved = obs.map(|k, v| v + shift[k]).unwrap();
        let theta0 = model.theta0() + DVector::from_column_slice(&shift);
        let moved_model = GaussianMeanModel::new(theta0.clone(), model.theta1().clone(), model.cov().clone(), true).unwrap();
        let null = model.null_model();
        let moved_null = moved_model.null_model();
        prop_assert!(close(
            glr_known_cov(&obs, null).unwrap().two_log_value,
            glr_known_cov(&moved, moved_null).unwrap().two_log_value,
            1e-9
        ));
        prop_assert!(close(
            lmp_known_cov(&obs, null.theta0(), &null.cov_diag()).unwrap().two_log_value,
            lmp_known_cov(&moved, &theta0, &null.cov_diag()).unwrap().two_log_value,
            1e-9
        ));
        prop_assert!(close(
            glr_unknown_cov(&obs, null.theta0()).unwrap().two_log_value,
            glr_unknown_cov(&moved, &theta0).unwrap().two_log_value,
            1e-9
        ));
        prop_assert!(close(
            lmp_unknown_cov(&obs, null.theta0()).unwrap().two_log_value,
            lmp_unknown_cov(&moved, &theta0).unwrap().two_log_value,
            1e-9
        ));
    }

    #[test]
    fn unknown_cov_glr_is_affine_invariant(seed in any::<u64>(), entries in prop::collection::vec(-1.0f64..1.0, 9)) {
        let (obs, model) = block(3, 9, 0.3, seed);
        let a = DMatrix::from_row_slice(3, 3, &entries) + DMatrix::identity(3, 3) * 3.0;
        let offset = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let transformed = ObservationBlock::new(&a * obs.data() + &offset * nalgebra::RowDVector::from_element(9, 1.0)).unwrap();
        let theta0 = &a * model.theta0() + &offset;
        let before = glr_unknown_cov(&obs, model.theta0()).unwrap().two_log_value;
        let after = glr_unknown_cov(&transformed, &theta0).unwrap().two_log_value;
        prop_assert!(close(before, after, 1e-8), "{} vs {}", before, after);
    }

    #[test]
    fn unknown_cov_lmp_is_scale_invariant(seed in any::<u64>(), scales in prop::collection::vec(0.01f64..100.0, 4)) {
        let (obs, model) = block(4, 10, 0.3, seed);
        let scaled = obs.map(|k, v| v * scales[k]).unwrap();
        let theta0 = DVector::from_fn(4, |k, _| model.theta0()[k] * scales[k]);
        prop_assert!(close(
            lmp_unknown_cov(&obs, model.theta0()).unwrap().two_log_value,
            lmp_unknown_cov(&scaled, &theta0).unwrap().two_log_value,
            1e-10
        ));
    }

    #[test]
    fn hotelling_form_equals_determinant_ratio(seed in any::<u64>(), rho in -0.5f64..0.9) {
        let (obs, model) = block(4, 12, rho, seed);
        let a = glr_unknown_cov(&obs, model.theta0()).unwrap().two_log_value;
        let b = glr_unknown_cov_det_ratio(&obs, model.theta0()).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
    }

    #[test]
    fn independent_sensors_make_glr_and_lmp_equal(seed in any::<u64>()) {
        let model = GaussianMeanModel::toeplitz(0.0, &[0.2, -0.1, 0.4, 0.0, 0.3], true).unwrap();
        let obs = sample_observations(&model, Hypothesis::H1, 7, seed).unwrap();
        let null = model.null_model();
        let g = glr_known_cov(&obs, null).unwrap().two_log_value;
        let m = lmp_known_cov(&obs, null.theta0(), &null.cov_diag()).unwrap().two_log_value;
        prop_assert!(close(g, m, 1e-12));
    }

    #[test]
    fn consensus_preserves_the_average(seed in 0u64..500, values in prop::collection::vec(-10.0f64..10.0, 8)) {
        let net = match generate_geometric_network(8, 13, 50.0, seed) {
            Ok(net) => net,
            Err(_) => return Ok(()),
        };
        let trace = ConsensusTrace::run(&net, &values, 30).unwrap();
        let total: f64 = values.iter().sum();
        for state in &trace.states {
            let s: f64 = state.iter().sum();
            prop_assert!((s - total).abs() <= 1e-11 * (1.0 + values.iter().map(|v| v.abs()).sum::<f64>()));
        }
        prop_assert!(trace.l2_error(30) <= trace.l2_error(0) + 1e-12);
    }

    #[test]
    fn network_text_round_trips(seed in 0u64..500) {
        if let Ok(net) = generate_geometric_network(9, 14, 100.0, seed) {
            let back = SensorNetwork::from_text(&net.to_text()).unwrap();
            prop_assert_eq!(back.edges(), net.edges());
            prop_assert_eq!(back.content_hash(), net.content_hash());
        }
    }

    #[test]
    fn saddlepoint_ccdf_is_monotone(
        weights in prop::collection::vec(0.05f64..3.0, 1..6),
        shifts in prop::collection::vec(-2.0f64..2.0, 6),
        xs in prop::collection::vec(0.01f64..40.0, 2..20),
    ) {
        let delta = &shifts[..weights.len()];
        let dist = QuadFormDistribution::from_weights(&weights, delta).unwrap();
        let mut xs = xs;
        xs.sort_by(f64::total_cmp);
        let mut prev = 1.0;
        for &x in &xs {
            let p = saddlepoint_ccdf(&dist, x).unwrap();
            prop_assert!((0.0..=1.0).contains(&p));
            prop_assert!(p <= prev + 1e-12, "x={} p={} prev={}", x, p, prev);
            prev = p;
            let s = solve_saddlepoint(&dist, x).unwrap();
            let residual = dist.cgf(s).unwrap().first - x;
            prop_assert!(residual.abs() < 1e-10 * x.max(1.0));
        }
    }
}
