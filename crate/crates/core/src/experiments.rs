//! Desk-scale experiments: Monte Carlo CROC curves against theory,
//! deflection sweeps, estimator covariance checks and the energy budget.
//!
//! Every experiment is a pure function of its inputs. Trials run in
//! parallel but are collected and reduced in trial order, so the emitted
//! CSV bytes do not depend on the thread count.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::asymptotics::{
    asymptotic_spec, croc_theoretical, deflection_glr, deflection_lmp, local_mle_asymptotic_cov,
    marginal_fisher_tilde,
};
use crate::config::{AngleGrid, ExperimentConfig, StatisticFamily};
use crate::consensus::{spatial_sum, TransmissionLedger};
use crate::detectors::{centralized_statistic, decide, lmp_distributed, StatisticKind};
use crate::error::{Error, Result};
use crate::estimators::empirical_estimator_covariance;
use crate::model::{sample_observations, GaussianMeanModel, Hypothesis};
use crate::network::SensorNetwork;
use crate::rng::derive_seed;

/// Messages per node per shared vector entry in the centralized GLR cost model.
pub const GLR_ENERGY_CONSTANT: f64 = 1.0;

/// Inputs of a CROC run, already built and validated.
#[derive(Debug, Clone)]
pub struct CrocConfig {
    pub model: GaussianMeanModel,
    pub network: SensorNetwork,
    pub n_slots: usize,
    pub n_it: usize,
    pub n_trials: usize,
    pub base_seed: u64,
    pub grid_size: usize,
    pub statistics: Vec<StatisticFamily>,
    /// Recorded in the metadata only.
    pub rho: Option<f64>,
}

impl CrocConfig {
    pub fn from_experiment(config: &ExperimentConfig) -> Result<Self> {
        let model_cfg = config.model()?;
        let model = model_cfg.build()?;
        let network = config.network()?.build(model.n_sensors())?;
        Ok(Self {
            model,
            network,
            n_slots: model_cfg.n_slots,
            n_it: config.n_it,
            n_trials: config.n_trials,
            base_seed: config.base_seed,
            grid_size: config.grid_size,
            statistics: config.statistics.clone(),
            rho: model_cfg.rho(),
        })
    }

    fn validate(&self) -> Result<()> {
        if self.network.n_nodes() != self.model.n_sensors() {
            return Err(Error::DimensionMismatch {
                expected: self.model.n_sensors(),
                actual: self.network.n_nodes(),
            });
        }
        if self.n_trials == 0 || self.n_slots == 0 || self.n_it == 0 {
            return Err(Error::InvalidParameter(
                "n_trials, L and n_it must be positive".into(),
            ));
        }
        if self.grid_size < 2 {
            return Err(Error::InvalidParameter(
                "grid size must be at least 2".into(),
            ));
        }
        if self.statistics.is_empty() {
            return Err(Error::InvalidParameter("no statistic requested".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrocMetadata {
    pub kind: StatisticKind,
    pub n_trials: usize,
    pub n_slots: usize,
    pub rho: Option<f64>,
    pub seed: u64,
    pub network_hash: String,
    /// Consensus rounds, for the distributed statistic.
    pub n_it: Option<usize>,
}

impl CrocMetadata {
    fn header(&self, experiment: &str) -> String {
        let mut line = format!(
            "# experiment={experiment} statistic={} n_trials={} L={} rho={} seed={} network={}",
            self.kind,
            self.n_trials,
            self.n_slots,
            self.rho
                .map_or_else(|| "custom".to_string(), |r| r.to_string()),
            self.seed,
            self.network_hash,
        );
        if let Some(n_it) = self.n_it {
            write!(line, " n_it={n_it}").unwrap();
        }
        line
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrocRow {
    pub gamma: f64,
    pub pfa_mc: f64,
    pub pmd_mc: f64,
    pub pfa_theory: f64,
    pub pmd_theory: f64,
    pub mc_stderr_pfa: f64,
    pub mc_stderr_pmd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveSource {
    MonteCarlo,
    Theory,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrocTable {
    pub metadata: CrocMetadata,
    pub rows: Vec<CrocRow>,
}

impl CrocTable {
    /// Joined table with every column.
    pub fn to_csv(&self) -> String {
        let mut out = self.metadata.header("croc");
        out.push_str("\ngamma,pfa_mc,pmd_mc,pfa_theory,pmd_theory,mc_stderr_pfa,mc_stderr_pmd\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.gamma,
                r.pfa_mc,
                r.pmd_mc,
                r.pfa_theory,
                r.pmd_theory,
                r.mc_stderr_pfa,
                r.mc_stderr_pmd
            )
            .unwrap();
        }
        out
    }

    pub fn mc_csv(&self) -> String {
        let mut out = self.metadata.header("croc-mc");
        out.push_str("\ngamma,pfa_mc,pmd_mc,mc_stderr_pfa,mc_stderr_pmd\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{}",
                r.gamma, r.pfa_mc, r.pmd_mc, r.mc_stderr_pfa, r.mc_stderr_pmd
            )
            .unwrap();
        }
        out
    }

    pub fn theory_csv(&self) -> String {
        let mut out = self.metadata.header("croc-theory");
        out.push_str("\ngamma,pfa_theory,pmd_theory\n");
        for r in &self.rows {
            writeln!(out, "{},{},{}", r.gamma, r.pfa_theory, r.pmd_theory).unwrap();
        }
        out
    }

    /// `P_MD` of one curve at false-alarm level `pfa`, by linear
    /// interpolation between grid rows. `None` outside the curve's range.
    pub fn pmd_at_pfa(&self, pfa: f64, source: CurveSource) -> Option<f64> {
        let point = |r: &CrocRow| match source {
            CurveSource::MonteCarlo => (r.pfa_mc, r.pmd_mc),
            CurveSource::Theory => (r.pfa_theory, r.pmd_theory),
        };
        // rows run from high to low false alarm
        for w in self.rows.windows(2) {
            let (p0, m0) = point(&w[0]);
            let (p1, m1) = point(&w[1]);
            if p0 >= pfa && pfa >= p1 {
                if p0 == p1 {
                    return Some(m0.min(m1));
                }
                return Some(m0 + (m1 - m0) * (p0 - pfa) / (p0 - p1));
            }
        }
        None
    }
}

/// Result of [`run_croc_experiment`]: one table per requested statistic and
/// the broadcasts spent by the distributed runs.
#[derive(Debug, Clone)]
pub struct CrocRun {
    pub tables: Vec<CrocTable>,
    pub ledger: TransmissionLedger,
}

/// Statistic values of one trial, indexed `[H0, H1]`.
struct TrialValues {
    glr: [f64; 2],
    lmp: [f64; 2],
    ledger: TransmissionLedger,
}

/// Type-7 sample quantile of sorted data.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `grid_size` thresholds at evenly spaced quantiles of the pooled values.
pub fn quantile_grid(h0: &[f64], h1: &[f64], grid_size: usize) -> Vec<f64> {
    let mut pooled: Vec<f64> = h0.iter().chain(h1).copied().collect();
    pooled.sort_by(f64::total_cmp);
    (0..grid_size)
        .map(|i| quantile_sorted(&pooled, i as f64 / (grid_size - 1) as f64))
        .collect()
}

fn binomial_stderr(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

fn build_table(
    config: &CrocConfig,
    kind: StatisticKind,
    h0: &[f64],
    h1: &[f64],
    n_it: Option<usize>,
) -> Result<CrocTable> {
    let gammas = quantile_grid(h0, h1, config.grid_size);
    let spec = asymptotic_spec(&config.model, config.n_slots, kind.is_glr())?;
    let theory = croc_theoretical(&spec, &gammas)?;
    let mut sorted0 = h0.to_vec();
    let mut sorted1 = h1.to_vec();
    sorted0.sort_by(f64::total_cmp);
    sorted1.sort_by(f64::total_cmp);
    let n = config.n_trials;
    let rows = gammas
        .iter()
        .zip(&theory)
        .map(|(&gamma, point)| {
            // a value equal to gamma decides H1
            let below0 = sorted0.partition_point(|v| *v < gamma);
            let below1 = sorted1.partition_point(|v| *v < gamma);
            let pfa_mc = (n - below0) as f64 / n as f64;
            let pmd_mc = below1 as f64 / n as f64;
            CrocRow {
                gamma,
                pfa_mc,
                pmd_mc,
                pfa_theory: point.pfa,
                pmd_theory: point.pmd,
                mc_stderr_pfa: binomial_stderr(pfa_mc, n),
                mc_stderr_pmd: binomial_stderr(pmd_mc, n),
            }
        })
        .collect();
    Ok(CrocTable {
        metadata: CrocMetadata {
            kind,
            n_trials: n,
            n_slots: config.n_slots,
            rho: config.rho,
            seed: config.base_seed,
            network_hash: config.network.content_hash(),
            n_it,
        },
        rows,
    })
}

/// Monte Carlo CROC curves joined with the theoretical curves on the same
/// threshold grid.
///
/// Trial `t` samples its H0 block with `derive_seed(seed, 2t)` and its H1
/// block with `derive_seed(seed, 2t + 1)`; every requested statistic is
/// evaluated on the same blocks. The GLR statistic is centralized, the
/// marginal-product statistic runs distributed with `n_it` consensus rounds
/// and node 0's value is recorded.
pub fn run_croc_experiment(config: &CrocConfig) -> Result<CrocRun> {
    config.validate()?;
    let want_glr = config.statistics.contains(&StatisticFamily::Glr);
    let want_lmp = config.statistics.contains(&StatisticFamily::Lmp);
    let cov_known = config.model.cov_known();
    let null = config.model.null_model();
    let n_nodes = config.network.n_nodes();

    let trials: Vec<TrialValues> = (0..config.n_trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut values = TrialValues {
                glr: [f64::NAN; 2],
                lmp: [f64::NAN; 2],
                ledger: TransmissionLedger::new(n_nodes),
            };
            for (i, hyp) in [Hypothesis::H0, Hypothesis::H1].into_iter().enumerate() {
                let seed = derive_seed(config.base_seed, 2 * t + i as u64);
                let obs = sample_observations(&config.model, hyp, config.n_slots, seed)?;
                if want_glr {
                    values.glr[i] =
                        centralized_statistic(StatisticKind::glr(cov_known), &obs, null)?
                            .two_log_value;
                }
                if want_lmp {
                    let per_node = lmp_distributed(
                        &obs,
                        &config.network,
                        null,
                        config.n_it,
                        &mut values.ledger,
                    )?;
                    values.lmp[i] = per_node[0].two_log_value;
                }
            }
            Ok(values)
        })
        .collect::<Result<_>>()?;

    let mut ledger = TransmissionLedger::new(n_nodes);
    for t in &trials {
        ledger.merge(&t.ledger)?;
    }
    let column = |pick: fn(&TrialValues) -> [f64; 2], i: usize| -> Vec<f64> {
        trials.iter().map(|t| pick(t)[i]).collect()
    };

    let mut tables = Vec::new();
    for family in &config.statistics {
        let table = match family {
            StatisticFamily::Glr => build_table(
                config,
                StatisticKind::glr(cov_known),
                &column(|t| t.glr, 0),
                &column(|t| t.glr, 1),
                None,
            )?,
            StatisticFamily::Lmp => build_table(
                config,
                StatisticKind::lmp(cov_known),
                &column(|t| t.lmp, 0),
                &column(|t| t.lmp, 1),
                Some(config.n_it),
            )?,
        };
        tables.push(table);
    }
    Ok(CrocRun { tables, ledger })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeflectionRow {
    pub rho: f64,
    pub phi_degrees: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeflectionTable {
    pub norm: f64,
    pub n_slots: usize,
    pub rows: Vec<DeflectionRow>,
}

impl DeflectionTable {
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# experiment=deflection N=2 norm={} L={} seed=none\nrho,phi_degrees,ratio\n",
            self.norm, self.n_slots
        );
        for r in &self.rows {
            writeln!(out, "{},{},{}", r.rho, r.phi_degrees, r.ratio).unwrap();
        }
        out
    }

    pub fn rows_for(&self, rho: f64) -> impl Iterator<Item = &DeflectionRow> {
        self.rows.iter().filter(move |r| r.rho == rho)
    }
}

/// Ratio of the marginal-product to the GLR deflection for two sensors with
/// `theta1 = norm [cos phi, sin phi]`.
pub fn deflection_sweep(
    rhos: &[f64],
    phis: &AngleGrid,
    norm: f64,
    n_slots: usize,
) -> Result<DeflectionTable> {
    if !(norm > 0.0) || !norm.is_finite() || n_slots == 0 {
        return Err(Error::InvalidParameter(
            "norm and L must be positive".into(),
        ));
    }
    let mut rows = Vec::new();
    for &rho in rhos {
        for phi in phis.values() {
            let (s, c) = phi.to_radians().sin_cos();
            let model = GaussianMeanModel::toeplitz(rho, &[norm * c, norm * s], true)?;
            let ratio = deflection_lmp(&model, n_slots)? / deflection_glr(&model, n_slots)?;
            rows.push(DeflectionRow {
                rho,
                phi_degrees: phi,
                ratio,
            });
        }
    }
    Ok(DeflectionTable {
        norm,
        n_slots,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyReport {
    pub n_nodes: usize,
    pub n_it: usize,
    pub kind: StatisticKind,
    /// `N n_it` broadcasts for one distributed statistic.
    pub lmp_broadcasts: u64,
    /// `c N^2` under the flooding model of the centralized statistic.
    pub glr_transmissions: f64,
    pub glr_constant: f64,
    pub measured_broadcasts: Option<u64>,
}

impl EnergyReport {
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "# experiment=energy statistic={} seed=none\nn_nodes={}\nn_it={}\nlmp_broadcasts={}\nglr_constant={}\nglr_transmissions={}\n",
            self.kind, self.n_nodes, self.n_it, self.lmp_broadcasts, self.glr_constant, self.glr_transmissions
        );
        match self.measured_broadcasts {
            Some(m) => writeln!(out, "measured_broadcasts={m}").unwrap(),
            None => out.push_str("measured_broadcasts=none\n"),
        }
        out
    }
}

/// Broadcast budget of one detection. `measured` is the ledger of an actual
/// distributed run, if one happened.
pub fn energy_report(
    n_nodes: usize,
    n_it: usize,
    kind: StatisticKind,
    measured: Option<&TransmissionLedger>,
) -> Result<EnergyReport> {
    if n_nodes == 0 {
        return Err(Error::InvalidParameter(
            "energy report needs at least one node".into(),
        ));
    }
    if let Some(ledger) = measured {
        if ledger.per_node_broadcasts().len() != n_nodes {
            return Err(Error::DimensionMismatch {
                expected: n_nodes,
                actual: ledger.per_node_broadcasts().len(),
            });
        }
    }
    Ok(EnergyReport {
        n_nodes,
        n_it,
        kind,
        lmp_broadcasts: (n_nodes * n_it) as u64,
        glr_transmissions: GLR_ENERGY_CONSTANT * (n_nodes * n_nodes) as f64,
        glr_constant: GLR_ENERGY_CONSTANT,
        measured_broadcasts: measured.map(TransmissionLedger::total_broadcasts),
    })
}

/// Runs one spatial sum on `network` and reports the broadcasts it used.
pub fn measured_energy_report(
    network: &SensorNetwork,
    n_it: usize,
    kind: StatisticKind,
) -> Result<EnergyReport> {
    let mut ledger = TransmissionLedger::new(network.n_nodes());
    spatial_sum(network, &vec![1.0; network.n_nodes()], n_it, &mut ledger)?;
    energy_report(network.n_nodes(), n_it, kind, Some(&ledger))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorReport {
    pub n_slots: usize,
    pub n_trials: usize,
    pub empirical: DMatrix<f64>,
    pub predicted: DMatrix<f64>,
    pub max_rel_diag_error: f64,
    pub max_abs_offdiag_error: f64,
}

impl EstimatorReport {
    pub fn to_text(&self, seed: u64) -> String {
        format!(
            "# experiment=estimator-covariance seed={seed}\nL={}\nn_trials={}\nmax_rel_diag_error={}\nmax_abs_offdiag_error={}\n",
            self.n_slots, self.n_trials, self.max_rel_diag_error, self.max_abs_offdiag_error
        )
    }
}

/// Empirical covariance of the local mean estimates against the predicted
/// large-sample covariance.
pub fn validate_estimator_asymptotics(
    model: &GaussianMeanModel,
    n_slots: usize,
    n_trials: usize,
    seed: u64,
) -> Result<EstimatorReport> {
    if n_trials < 10_000 {
        return Err(Error::InvalidParameter(format!(
            "estimator validation needs at least 10^4 trials, got {n_trials}"
        )));
    }
    let fisher = marginal_fisher_tilde(model.cov())?;
    let predicted = local_mle_asymptotic_cov(&fisher, n_slots)?;
    let empirical = empirical_estimator_covariance(model, Hypothesis::H1, n_slots, n_trials, seed)?;
    let n = model.n_sensors();
    let mut max_rel_diag_error = 0.0f64;
    let mut max_abs_offdiag_error = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let diff = (empirical[(i, j)] - predicted[(i, j)]).abs();
            if i == j {
                max_rel_diag_error = max_rel_diag_error.max(diff / predicted[(i, i)]);
            } else {
                max_abs_offdiag_error = max_abs_offdiag_error.max(diff);
            }
        }
    }
    Ok(EstimatorReport {
        n_slots,
        n_trials,
        empirical,
        predicted,
        max_rel_diag_error,
        max_abs_offdiag_error,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecisionAgreement {
    /// Trials where every node reached the centralized decision.
    pub all_nodes: f64,
    /// Node decisions matching the centralized one, over all trials and nodes.
    pub per_node: f64,
    /// Agreement rate of the least reliable node.
    pub worst_node: f64,
}

/// Compares each node's distributed marginal-product decision with the
/// centralized one at threshold `gamma`. Even trials sample H0, odd trials H1.
pub fn decision_agreement(
    model: &GaussianMeanModel,
    network: &SensorNetwork,
    n_slots: usize,
    n_it: usize,
    n_trials: usize,
    gamma: f64,
    seed: u64,
) -> Result<DecisionAgreement> {
    if n_trials == 0 {
        return Err(Error::InvalidParameter("need at least one trial".into()));
    }
    let null = model.null_model();
    let kind = StatisticKind::lmp(model.cov_known());
    let matches: Vec<Vec<bool>> = (0..n_trials as u64)
        .into_par_iter()
        .map(|t| {
            let hyp = if t % 2 == 0 {
                Hypothesis::H0
            } else {
                Hypothesis::H1
            };
            let obs = sample_observations(model, hyp, n_slots, derive_seed(seed, t))?;
            let central = decide(
                centralized_statistic(kind, &obs, null)?.two_log_value,
                gamma,
            );
            let mut ledger = TransmissionLedger::new(network.n_nodes());
            let local = lmp_distributed(&obs, network, null, n_it, &mut ledger)?;
            Ok(local
                .iter()
                .map(|v| decide(v.two_log_value, gamma) == central)
                .collect())
        })
        .collect::<Result<_>>()?;
    let n = network.n_nodes();
    let all = matches.iter().filter(|m| m.iter().all(|&ok| ok)).count();
    let mut per_node_hits = vec![0usize; n];
    for m in &matches {
        for (hits, &ok) in per_node_hits.iter_mut().zip(m) {
            *hits += ok as usize;
        }
    }
    let total: usize = per_node_hits.iter().sum();
    let worst = per_node_hits.iter().copied().min().unwrap_or(0);
    Ok(DecisionAgreement {
        all_nodes: all as f64 / n_trials as f64,
        per_node: total as f64 / (n_trials * n) as f64,
        worst_node: worst as f64 / n_trials as f64,
    })
}

/// `<experiment>_<statistic>_<seed>.csv`
pub fn output_file_name(experiment: &str, statistic: &str, seed: impl std::fmt::Display) -> String {
    format!("{experiment}_{statistic}_{seed}.csv")
}

pub fn write_output(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(path)
}
