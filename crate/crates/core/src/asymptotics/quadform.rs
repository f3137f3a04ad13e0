use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Eigenvalues below this fraction of the largest one are treated as zero.
pub const EIGENVALUE_CUTOFF: f64 = 1e-12;

/// Law of `||n||^2` for `n ~ N(mu, sigma)`.
///
/// Internally the law is rotated to `offset + sum_i lambda_i (g_i + delta_i)^2`
/// with `g` standard normal, `lambda` the retained eigenvalues of `sigma`
/// (descending) and `delta_i = (U^T mu)_i / sqrt(lambda_i)`. Mean components
/// along dropped (numerically null) eigendirections have no variance and
/// end up in the constant `offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadFormDistribution {
    mu: DVector<f64>,
    sigma: DMatrix<f64>,
    eigvals: Vec<f64>,
    delta: Vec<f64>,
    offset: f64,
}

/// `K(s)` and its first two derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgfValues {
    pub value: f64,
    pub first: f64,
    pub second: f64,
}

impl QuadFormDistribution {
    pub fn new(mu: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let p = mu.len();
        if p == 0 {
            return Err(Error::InvalidParameter(
                "quadratic form needs dimension >= 1".into(),
            ));
        }
        if sigma.nrows() != p || sigma.ncols() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                actual: sigma.nrows(),
            });
        }
        if mu.iter().chain(sigma.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "non-finite distribution parameters".into(),
            ));
        }
        let sym = (&sigma + sigma.transpose()) * 0.5;
        let eig = sym.clone().symmetric_eigen();
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let lambda_max = eig.eigenvalues[order[0]];
        if lambda_max < -1e-10 * sym.amax().max(f64::MIN_POSITIVE) {
            return Err(Error::NotPositiveDefinite(
                "covariance has negative eigenvalues".into(),
            ));
        }
        let rotated = eig.eigenvectors.transpose() * &mu;
        let mut eigvals = Vec::with_capacity(p);
        let mut delta = Vec::with_capacity(p);
        let mut offset = 0.0;
        for &i in &order {
            let lambda = eig.eigenvalues[i];
            if lambda_max > 0.0 && lambda > EIGENVALUE_CUTOFF * lambda_max {
                eigvals.push(lambda);
                delta.push(rotated[i] / lambda.sqrt());
            } else {
                if lambda < -1e-8 * lambda_max.max(f64::MIN_POSITIVE) {
                    return Err(Error::NotPositiveDefinite(format!(
                        "covariance eigenvalue {lambda} is negative"
                    )));
                }
                offset += rotated[i] * rotated[i];
            }
        }
        Ok(Self {
            mu,
            sigma: sym,
            eigvals,
            delta,
            offset,
        })
    }

    /// Central chi-square with `p` degrees of freedom.
    pub fn central_chi_square(p: usize) -> Result<Self> {
        Self::new(DVector::zeros(p), DMatrix::identity(p, p))
    }

    /// `sum_i weights_i (g_i + delta_i)^2` given directly in rotated form.
    pub fn from_weights(weights: &[f64], delta: &[f64]) -> Result<Self> {
        if weights.len() != delta.len() {
            return Err(Error::DimensionMismatch {
                expected: weights.len(),
                actual: delta.len(),
            });
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidParameter(
                "weights must be nonnegative".into(),
            ));
        }
        let mu = DVector::from_fn(weights.len(), |i, _| weights[i].sqrt() * delta[i]);
        let sigma = DMatrix::from_diagonal(&DVector::from_column_slice(weights));
        Self::new(mu, sigma)
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    /// Retained eigenvalues of `sigma`, descending.
    pub fn eigvals(&self) -> &[f64] {
        &self.eigvals
    }

    /// Standardized noncentralities along the retained eigendirections.
    pub fn delta(&self) -> &[f64] {
        &self.delta
    }

    /// Constant contribution of mean components along null directions.
    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// `||mu||^2`.
    pub fn noncentrality(&self) -> f64 {
        self.mu.norm_squared()
    }

    pub fn max_eigval(&self) -> Option<f64> {
        self.eigvals.first().copied()
    }

    /// `tr(sigma) + ||mu||^2`.
    pub fn mean(&self) -> f64 {
        self.offset
            + self
                .eigvals
                .iter()
                .zip(&self.delta)
                .map(|(l, d)| l * (1.0 + d * d))
                .sum::<f64>()
    }

    /// `2 sum lambda_i^2 + 4 sum lambda_i (U^T mu)_i^2`.
    pub fn variance(&self) -> f64 {
        self.eigvals
            .iter()
            .zip(&self.delta)
            .map(|(l, d)| 2.0 * l * l + 4.0 * l * l * d * d)
            .sum()
    }

    /// Upper end of the CGF domain, `1 / (2 lambda_max)` (infinite for a
    /// point mass).
    pub fn cgf_upper_limit(&self) -> f64 {
        match self.max_eigval() {
            Some(l) => 0.5 / l,
            None => f64::INFINITY,
        }
    }

    /// Cumulant generating function of the full law,
    /// `K(s) = s offset + sum_i [ -log(1 - 2 s l_i)/2 + s l_i d_i^2 / (1 - 2 s l_i) ]`,
    /// with its exact first and second derivatives. Requires
    /// `s < 1 / (2 lambda_max)`.
    pub fn cgf(&self, s: f64) -> Result<CgfValues> {
        if !s.is_finite() || s >= self.cgf_upper_limit() {
            return Err(Error::InvalidParameter(format!(
                "cgf argument {s} outside domain (-inf, {})",
                self.cgf_upper_limit()
            )));
        }
        let mut values = CgfValues {
            value: s * self.offset,
            first: self.offset,
            second: 0.0,
        };
        for (&l, &d) in self.eigvals.iter().zip(&self.delta) {
            let a = 1.0 - 2.0 * s * l;
            let d2 = d * d;
            values.value += -0.5 * (-2.0 * s * l).ln_1p() + s * l * d2 / a;
            values.first += l / a + l * d2 / (a * a);
            values.second += 2.0 * l * l / (a * a) + 4.0 * l * l * d2 / (a * a * a);
        }
        Ok(values)
    }

    /// First to fourth derivatives of the CGF, without domain checks.
    pub(crate) fn cgf_derivatives(&self, s: f64) -> [f64; 4] {
        let mut k = [self.offset, 0.0, 0.0, 0.0];
        for (&l, &d) in self.eigvals.iter().zip(&self.delta) {
            let a = 1.0 - 2.0 * s * l;
            let d2 = d * d;
            let (l2, a2) = (l * l, a * a);
            k[0] += l / a + l * d2 / a2;
            k[1] += 2.0 * l2 / a2 + 4.0 * l2 * d2 / (a2 * a);
            k[2] += 8.0 * l2 * l / (a2 * a) + 24.0 * l2 * l * d2 / (a2 * a2);
            k[3] += 48.0 * l2 * l2 / (a2 * a2) + 192.0 * l2 * l2 * d2 / (a2 * a2 * a);
        }
        k
    }

    /// `s K'(s) - K(s)` evaluated without cancellation near `s = 0`.
    pub(crate) fn legendre_gap(&self, s: f64) -> f64 {
        self.eigvals
            .iter()
            .zip(&self.delta)
            .map(|(&l, &d)| {
                let t = 2.0 * s * l;
                let a = 1.0 - t;
                0.5 * log_gap(t) + t * t * d * d / (2.0 * a * a)
            })
            .sum()
    }
}

/// `t / (1 - t) + log(1 - t)`, nonnegative for `t < 1`.
fn log_gap(t: f64) -> f64 {
    if t.abs() < 0.05 {
        // sum_{n >= 2} (1 - 1/n) t^n
        let mut power = t * t;
        let mut sum = 0.0;
        for n in 2..=26 {
            sum += (1.0 - 1.0 / n as f64) * power;
            power *= t;
        }
        sum
    } else {
        t / (1.0 - t) + (-t).ln_1p()
    }
}
