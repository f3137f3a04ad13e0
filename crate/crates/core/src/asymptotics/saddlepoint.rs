use statrs::function::erf::erfc;

use super::quadform::QuadFormDistribution;
use crate::error::{Error, Result};

pub const SADDLEPOINT_MAX_ITER: usize = 200;

/// Below this `|s|` the first-order tail term is replaced by its series.
const NEAR_MEAN_SADDLEPOINT: f64 = 1e-5;

/// Below this `|u|` the second-order correction is interpolated.
const SECOND_ORDER_GAP: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LugannaniRiceOrder {
    #[default]
    First,
    /// Adds the `O(n^{-3/2})` correction term. Diagnostic use.
    Second,
}

fn normal_ccdf(w: f64) -> f64 {
    0.5 * erfc(w / std::f64::consts::SQRT_2)
}

fn normal_pdf(w: f64) -> f64 {
    (-0.5 * w * w).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Solves `K'(s) = x` on `(-inf, 1 / (2 lambda_max))` by Newton steps
/// safeguarded with bisection. Requires `x > offset` and at least one
/// retained eigenvalue.
pub fn solve_saddlepoint(dist: &QuadFormDistribution, x: f64) -> Result<f64> {
    if dist.eigvals().is_empty() || !(x > dist.offset()) || !x.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "saddlepoint undefined at x = {x} (offset {})",
            dist.offset()
        )));
    }
    let tol = 1e-13 * x.abs().max(1.0);
    let mean = dist.mean();
    if (x - mean).abs() <= tol {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = if x > mean {
        (0.0, dist.cgf_upper_limit())
    } else {
        // K'(s) decreases to the offset as s -> -inf; widen until bracketed
        let mut lo = -dist.cgf_upper_limit();
        let mut widenings = 0;
        while dist.cgf_derivatives(lo)[0] > x {
            lo *= 2.0;
            widenings += 1;
            if widenings > 2000 || !lo.is_finite() {
                return Err(Error::SaddlepointNonConvergence {
                    x,
                    iterations: widenings,
                });
            }
        }
        (lo, 0.0)
    };
    let mut s = 0.0;
    for _ in 0..SADDLEPOINT_MAX_ITER {
        let k = dist.cgf_derivatives(s);
        let residual = k[0] - x;
        if residual.abs() <= tol {
            return Ok(s);
        }
        if residual > 0.0 {
            hi = s;
        } else {
            lo = s;
        }
        let newton = s - residual / k[1];
        s = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= 4.0 * f64::EPSILON * lo.abs().max(hi.abs()) {
            return Ok(s);
        }
    }
    Err(Error::SaddlepointNonConvergence {
        x,
        iterations: SADDLEPOINT_MAX_ITER,
    })
}

/// Signed root `w` and standardized saddlepoint `u` at `s`, where
/// `x` is the point `s` solves for.
fn roots(dist: &QuadFormDistribution, s: f64, x: f64, k: &[f64; 4]) -> (f64, f64) {
    let h = (dist.legendre_gap(s) + s * (x - k[0])).max(0.0);
    let w = s.signum() * (2.0 * h).sqrt();
    let u = s * k[1].sqrt();
    (w, u)
}

fn first_order_at(dist: &QuadFormDistribution, s: f64, x: f64) -> f64 {
    let k = dist.cgf_derivatives(s);
    let (w, u) = roots(dist, s, x, &k);
    let tail = if s.abs() < NEAR_MEAN_SADDLEPOINT || w == 0.0 || u == 0.0 {
        let k2 = k[1];
        -k[2] / (6.0 * k2.powf(1.5))
            + s * (k[3] / (24.0 * k2.powf(1.5)) - k[2] * k[2] / (24.0 * k2.powf(2.5)))
    } else {
        1.0 / u - 1.0 / w
    };
    normal_ccdf(w) + normal_pdf(w) * tail
}

fn second_order_at(dist: &QuadFormDistribution, s: f64, x: f64) -> f64 {
    let k = dist.cgf_derivatives(s);
    let (w, u) = roots(dist, s, x, &k);
    let skew = k[2] / k[1].powf(1.5);
    let kurt = k[3] / (k[1] * k[1]);
    let extra =
        (kurt / 8.0 - 5.0 * skew * skew / 24.0) / u - 1.0 / u.powi(3) - skew / (2.0 * u * u)
            + 1.0 / w.powi(3);
    normal_ccdf(w) + normal_pdf(w) * (1.0 / u - 1.0 / w + extra)
}

fn second_order(dist: &QuadFormDistribution, x: f64) -> Result<f64> {
    let s = solve_saddlepoint(dist, x)?;
    let k2 = dist.cgf_derivatives(s)[1];
    if s.abs() * k2.sqrt() >= SECOND_ORDER_GAP {
        return Ok(second_order_at(dist, s, x));
    }
    // the correction cancels catastrophically near the mean: interpolate in x
    let k2_mean = dist.variance();
    let edge = SECOND_ORDER_GAP / k2_mean.sqrt();
    let s_lo = -2.0 * edge;
    let s_hi = (2.0 * edge).min(0.5 * dist.cgf_upper_limit());
    let x_lo = dist.cgf_derivatives(s_lo)[0];
    let x_hi = dist.cgf_derivatives(s_hi)[0];
    if !(x_lo > dist.offset()) {
        return Ok(first_order_at(dist, s, x));
    }
    let f_lo = second_order_at(dist, s_lo, x_lo);
    let f_hi = second_order_at(dist, s_hi, x_hi);
    Ok(f_lo + (f_hi - f_lo) * (x - x_lo) / (x_hi - x_lo))
}

/// Lugannani–Rice approximation of `P(Q > x)`.
pub fn lugannani_rice_ccdf(
    dist: &QuadFormDistribution,
    x: f64,
    order: LugannaniRiceOrder,
) -> Result<f64> {
    if x.is_nan() {
        return Err(Error::InvalidParameter("ccdf at NaN".into()));
    }
    if dist.eigvals().is_empty() {
        return Ok(if x < dist.offset() { 1.0 } else { 0.0 });
    }
    if x <= dist.offset() {
        return Ok(1.0);
    }
    if x == f64::INFINITY {
        return Ok(0.0);
    }
    let p = match order {
        LugannaniRiceOrder::First => {
            let s = solve_saddlepoint(dist, x)?;
            first_order_at(dist, s, x)
        }
        LugannaniRiceOrder::Second => second_order(dist, x)?,
    };
    Ok(p.clamp(0.0, 1.0))
}

/// First-order Lugannani–Rice approximation of `P(Q > x)`.
pub fn saddlepoint_ccdf(dist: &QuadFormDistribution, x: f64) -> Result<f64> {
    lugannani_rice_ccdf(dist, x, LugannaniRiceOrder::First)
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::function::gamma::gamma_ur;

    fn chi2_ccdf(p: usize, x: f64) -> f64 {
        gamma_ur(p as f64 / 2.0, x / 2.0)
    }

    #[test]
    fn saddlepoint_solves_derivative_equation() {
        let d = QuadFormDistribution::from_weights(&[2.0, 1.0, 0.3], &[0.5, -1.5, 0.0]).unwrap();
        for x in [1e-3, 0.1, 1.0, d.mean(), 10.0, 200.0, 1e4] {
            let s = solve_saddlepoint(&d, x).unwrap();
            let k1 = d.cgf(s).unwrap().first;
            assert!((k1 - x).abs() <= 1e-10 * x.max(1.0), "x={x} k1={k1}");
        }
    }

    #[test]
    fn chi_square_ten_is_close() {
        let d = QuadFormDistribution::central_chi_square(10).unwrap();
        for i in 1..200 {
            let x = 0.2 * i as f64;
            let err = (saddlepoint_ccdf(&d, x).unwrap() - chi2_ccdf(10, x)).abs();
            assert!(err < 1e-4, "x={x} err={err}");
        }
    }

    #[test]
    fn continuous_through_the_mean() {
        let d = QuadFormDistribution::from_weights(&[1.0, 0.6, 0.2], &[0.4, 0.0, 1.0]).unwrap();
        let m = d.mean();
        let at = saddlepoint_ccdf(&d, m).unwrap();
        assert!(at > 0.3 && at < 0.7);
        for eps in [1e-9, 1e-7, 1e-6, 1e-5, 1e-4] {
            let below = saddlepoint_ccdf(&d, m - eps).unwrap();
            let above = saddlepoint_ccdf(&d, m + eps).unwrap();
            assert!(below >= at && at >= above, "eps={eps}");
            // the density is below 1 here
            assert!(below - above < 2.0 * eps + 1e-12, "eps={eps}");
        }
        // sweep across both switch points of the series branch
        for sign in [-1.0, 1.0] {
            let x_edge = d.cgf_derivatives(sign * NEAR_MEAN_SADDLEPOINT)[0];
            let mut prev = saddlepoint_ccdf(&d, x_edge - 1e-7).unwrap();
            for i in 1..=200 {
                let p = saddlepoint_ccdf(&d, x_edge - 1e-7 + i as f64 * 1e-9).unwrap();
                assert!((p - prev).abs() < 1e-6);
                prev = p;
            }
        }
    }

    #[test]
    fn monotone_and_bounded() {
        let d = QuadFormDistribution::from_weights(&[1.3, 1.0, 0.1], &[2.0, 0.3, 0.0]).unwrap();
        let mut prev = 1.0;
        for i in 0..400 {
            let x = 0.01 + 0.1 * i as f64;
            let p = saddlepoint_ccdf(&d, x).unwrap();
            assert!((0.0..=1.0).contains(&p));
            assert!(p <= prev + 1e-12, "x={x}");
            prev = p;
        }
    }

    #[test]
    fn boundary_cases() {
        let d = QuadFormDistribution::central_chi_square(3).unwrap();
        assert_eq!(saddlepoint_ccdf(&d, 0.0).unwrap(), 1.0);
        assert_eq!(saddlepoint_ccdf(&d, -1.0).unwrap(), 1.0);
        assert_eq!(saddlepoint_ccdf(&d, f64::INFINITY).unwrap(), 0.0);
        assert!(saddlepoint_ccdf(&d, f64::NAN).is_err());
        assert!(saddlepoint_ccdf(&d, 1e3).unwrap() < 1e-100);
    }

    #[test]
    fn second_order_improves_small_dimensions() {
        for p in [1usize, 2, 5] {
            let d = QuadFormDistribution::central_chi_square(p).unwrap();
            let (mut e1, mut e2) = (0.0f64, 0.0f64);
            for i in 1..300 {
                let x = 0.05 * i as f64;
                let exact = chi2_ccdf(p, x);
                e1 = e1.max((saddlepoint_ccdf(&d, x).unwrap() - exact).abs());
                let second = lugannani_rice_ccdf(&d, x, LugannaniRiceOrder::Second).unwrap();
                e2 = e2.max((second - exact).abs());
            }
            assert!(e2 < e1, "p={p} first={e1} second={e2}");
        }
    }
}
