//! The Gaussian mean-shift detection problem.
//!
//! Under `H0` the per-slot network snapshot `z_l` is `N(theta0, C)`, under
//! `H1` it is `N(theta1, C)`, iid over slots. `theta0` is known to the test,
//! `theta1` is not: it lives in [`GaussianMeanModel`] so the sampler and the
//! asymptotic analysis can use it, while every detector takes a
//! [`NullModel`], which carries no `theta1` at all.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, SimRng};

/// Relative tolerance for accepting an input covariance as symmetric.
pub const SYMMETRY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Hypothesis {
    H0,
    H1,
}

/// Symmetric Toeplitz matrix with first row `[1, rho, rho^2, ..., rho^(n-1)]`.
pub fn build_toeplitz_cov(rho: f64, n: usize) -> Result<DMatrix<f64>> {
    if !rho.is_finite() || rho.abs() >= 1.0 {
        return Err(Error::InvalidParameter(format!(
            "toeplitz correlation must satisfy |rho| < 1, got {rho}"
        )));
    }
    if n == 0 {
        return Err(Error::InvalidParameter(
            "matrix size must be at least 1".into(),
        ));
    }
    let first_row: Vec<f64> = (0..n).map(|k| rho.powi(k as i32)).collect();
    Ok(DMatrix::from_fn(n, n, |i, j| first_row[i.abs_diff(j)]))
}

fn check_symmetric(cov: &DMatrix<f64>) -> Result<()> {
    let n = cov.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let (a, b) = (cov[(i, j)], cov[(j, i)]);
            if (a - b).abs() > SYMMETRY_TOLERANCE * a.abs().max(b.abs()) {
                return Err(Error::NotPositiveDefinite(format!(
                    "covariance not symmetric at ({i},{j}): {a} vs {b}"
                )));
            }
        }
    }
    Ok(())
}

/// Validates and symmetrizes a covariance matrix, returning it with its
/// Cholesky factorization.
fn validated_cov(cov: DMatrix<f64>) -> Result<(DMatrix<f64>, Cholesky<f64, Dyn>)> {
    if cov.nrows() != cov.ncols() {
        return Err(Error::DimensionMismatch {
            expected: cov.nrows(),
            actual: cov.ncols(),
        });
    }
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(
            "covariance has non-finite entries".into(),
        ));
    }
    check_symmetric(&cov)?;
    let sym = (&cov + cov.transpose()) * 0.5;
    let chol = Cholesky::new(sym.clone())
        .ok_or_else(|| Error::NotPositiveDefinite("Cholesky factorization failed".into()))?;
    Ok((sym, chol))
}

/// A complete simulation instance: null and alternative means, covariance
/// and the covariance regime.
#[derive(Debug, Clone)]
pub struct GaussianMeanModel {
    null: NullModel,
    theta1: DVector<f64>,
}

impl GaussianMeanModel {
    pub fn new(
        theta0: DVector<f64>,
        theta1: DVector<f64>,
        cov: DMatrix<f64>,
        cov_known: bool,
    ) -> Result<Self> {
        let null = NullModel::new(theta0, cov, cov_known)?;
        if theta1.len() != null.n_sensors() {
            return Err(Error::DimensionMismatch {
                expected: null.n_sensors(),
                actual: theta1.len(),
            });
        }
        if theta1.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "theta1 has non-finite entries".into(),
            ));
        }
        Ok(Self { null, theta1 })
    }

    /// Zero null mean and Toeplitz covariance with correlation `rho`.
    pub fn toeplitz(rho: f64, theta1: &[f64], cov_known: bool) -> Result<Self> {
        let n = theta1.len();
        let cov = build_toeplitz_cov(rho, n)?;
        Self::new(
            DVector::zeros(n),
            DVector::from_column_slice(theta1),
            cov,
            cov_known,
        )
    }

    pub fn n_sensors(&self) -> usize {
        self.null.n_sensors()
    }

    pub fn theta0(&self) -> &DVector<f64> {
        self.null.theta0()
    }

    pub fn theta1(&self) -> &DVector<f64> {
        &self.theta1
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        self.null.cov()
    }

    pub fn cov_known(&self) -> bool {
        self.null.cov_known()
    }

    /// The part of the model a detector is allowed to see.
    pub fn null_model(&self) -> &NullModel {
        &self.null
    }

    /// Mean of the observations under `hypothesis`.
    pub fn mean(&self, hypothesis: Hypothesis) -> &DVector<f64> {
        match hypothesis {
            Hypothesis::H0 => self.null.theta0(),
            Hypothesis::H1 => &self.theta1,
        }
    }

    /// Dimension `P` of the locally observable parameter vector: one mean
    /// per node, plus one variance per node when the covariance is unknown.
    pub fn local_parameter_dim(&self) -> usize {
        if self.cov_known() {
            self.n_sensors()
        } else {
            2 * self.n_sensors()
        }
    }

    /// Lower Cholesky factor `G` of the covariance, `C = G G^T`.
    pub fn cov_factor(&self) -> DMatrix<f64> {
        self.null.chol.l()
    }
}

/// What a detector knows: the null mean, the covariance (used only when it
/// is declared known) and the covariance regime.
#[derive(Debug, Clone)]
pub struct NullModel {
    theta0: DVector<f64>,
    cov: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    cov_known: bool,
}

impl NullModel {
    pub fn new(theta0: DVector<f64>, cov: DMatrix<f64>, cov_known: bool) -> Result<Self> {
        let n = theta0.len();
        if n == 0 {
            return Err(Error::InvalidParameter(
                "model needs at least one sensor".into(),
            ));
        }
        if cov.nrows() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: cov.nrows(),
            });
        }
        if theta0.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "theta0 has non-finite entries".into(),
            ));
        }
        let (cov, chol) = validated_cov(cov)?;
        Ok(Self {
            theta0,
            cov,
            chol,
            cov_known,
        })
    }

    pub fn n_sensors(&self) -> usize {
        self.theta0.len()
    }

    pub fn theta0(&self) -> &DVector<f64> {
        &self.theta0
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn cov_cholesky(&self) -> &Cholesky<f64, Dyn> {
        &self.chol
    }

    pub fn cov_diag(&self) -> Vec<f64> {
        self.cov.diagonal().iter().copied().collect()
    }

    pub fn cov_known(&self) -> bool {
        self.cov_known
    }
}

/// `N x L` block of observations; column `l` is the network snapshot at slot
/// `l`, row `k` the time series of sensor `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationBlock {
    data: DMatrix<f64>,
}

impl ObservationBlock {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::InvalidParameter(
                "observation block needs at least one sensor and one slot".into(),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "observation block has non-finite entries".into(),
            ));
        }
        Ok(Self { data })
    }

    /// Builds a block from per-sensor rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let l = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != l) {
            return Err(Error::DimensionMismatch {
                expected: l,
                actual: bad.len(),
            });
        }
        Self::new(DMatrix::from_fn(n, l, |k, t| rows[k][t]))
    }

    pub fn n_sensors(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_slots(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    /// Samples of sensor `k`.
    pub fn row(&self, k: usize) -> Vec<f64> {
        self.data.row(k).iter().copied().collect()
    }

    /// Maps every sample through `f(sensor, value)`.
    pub fn map(&self, f: impl Fn(usize, f64) -> f64) -> Result<Self> {
        let data = DMatrix::from_fn(self.n_sensors(), self.n_slots(), |k, l| {
            f(k, self.data[(k, l)])
        });
        Self::new(data)
    }
}

/// Draws `n_slots` iid snapshots `theta_i + G u`, `u ~ N(0, I)`.
pub fn sample_observations(
    model: &GaussianMeanModel,
    hypothesis: Hypothesis,
    n_slots: usize,
    seed: u64,
) -> Result<ObservationBlock> {
    let mut rng = rng_from_seed(seed);
    sample_observations_with(model, hypothesis, n_slots, &mut rng)
}

/// Same as [`sample_observations`], drawing from a caller-owned stream.
pub fn sample_observations_with(
    model: &GaussianMeanModel,
    hypothesis: Hypothesis,
    n_slots: usize,
    rng: &mut SimRng,
) -> Result<ObservationBlock> {
    if n_slots == 0 {
        return Err(Error::InvalidParameter(
            "number of slots must be at least 1".into(),
        ));
    }
    let n = model.n_sensors();
    let factor = model.cov_factor();
    let mean = model.mean(hypothesis);
    let mut data = DMatrix::zeros(n, n_slots);
    let mut u = vec![0.0; n];
    for l in 0..n_slots {
        for ui in u.iter_mut() {
            *ui = rng.sample(StandardNormal);
        }
        for k in 0..n {
            let mut acc = mean[k];
            for (j, uj) in u.iter().enumerate().take(k + 1) {
                acc += factor[(k, j)] * uj;
            }
            data[(k, l)] = acc;
        }
    }
    ObservationBlock::new(data)
}
