//! Standard-normal tail arithmetic that stays accurate far into the tails.
//!
//! Every mass is carried as a natural logarithm. Interval masses are formed
//! from upper-tail probabilities on the side of zero where both endpoints
//! live, so that `[10, 11]` is `Q(10) - Q(11)` rather than the catastrophic
//! `Φ(11) - Φ(10)`. Beyond `x = 8` the tail comes from the Mills-ratio
//! continued fraction, which never underflows.

use std::f64::consts::{FRAC_1_SQRT_2, LN_2, PI};

use super::interval::{Interval, TruncationRegion};
use crate::error::{Error, Result};

/// Standardized distance used as a stand-in for an infinite endpoint.
pub const TAIL_PROXY: f64 = 40.0;

const MILLS_SWITCH: f64 = 8.0;
const MILLS_DEPTH: usize = 300;

/// `ln Q(x)` where `Q(x) = P(N(0,1) > x)`.
pub fn log_upper_tail(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x == f64::INFINITY {
        return f64::NEG_INFINITY;
    }
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    if x >= MILLS_SWITCH {
        // Q(x) = φ(x) R(x), R(x) = 1/(x + 1/(x + 2/(x + 3/(x + ...))))
        let mut t = x;
        for k in (1..=MILLS_DEPTH).rev() {
            t = x + k as f64 / t;
        }
        -0.5 * x * x - 0.5 * (2.0 * PI).ln() - t.ln()
    } else if x > -MILLS_SWITCH {
        (0.5 * libm::erfc(x * FRAC_1_SQRT_2)).ln()
    } else {
        // Q(x) = 1 - Q(-x), with Q(-x) tiny
        (-log_upper_tail(-x).exp()).ln_1p()
    }
}

/// `Q(x)`; underflows to zero only where the true value is below `f64::MIN_POSITIVE`.
pub fn upper_tail(x: f64) -> f64 {
    log_upper_tail(x).exp()
}

/// Standard normal CDF.
pub fn cdf(x: f64) -> f64 {
    upper_tail(-x)
}

/// Two-sided p-value `2 Q(|x|)` for a standardized statistic.
pub fn two_sided_p(x: f64) -> f64 {
    (LN_2 + log_upper_tail(x.abs())).exp().min(1.0)
}

/// `ln(e^a - e^b)` for `a >= b`.
fn log_diff_exp(a: f64, b: f64) -> f64 {
    if b == f64::NEG_INFINITY {
        return a;
    }
    if b >= a {
        return f64::NEG_INFINITY;
    }
    a + (-(b - a).exp()).ln_1p()
}

/// `ln(e^a + e^b)`.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `ln(Φ(hi) - Φ(lo))` for standardized endpoints.
pub fn log_standard_mass(lo: f64, hi: f64) -> f64 {
    if !(hi > lo) {
        return f64::NEG_INFINITY;
    }
    if lo >= 0.0 {
        log_diff_exp(log_upper_tail(lo), log_upper_tail(hi))
    } else if hi <= 0.0 {
        log_diff_exp(log_upper_tail(-hi), log_upper_tail(-lo))
    } else {
        // straddles zero: (Φ(hi) - 1/2) + (1/2 - Φ(lo)), each half via erf
        let right = half_mass(hi);
        let left = half_mass(-lo);
        (right + left).ln()
    }
}

/// `Φ(x) - 1/2` for `x >= 0`.
fn half_mass(x: f64) -> f64 {
    if x < 1.0 {
        0.5 * libm::erf(x * FRAC_1_SQRT_2)
    } else {
        0.5 - upper_tail(x)
    }
}

/// `ln P(lo <= N(mu, sigma^2) <= hi)`.
pub fn log_gaussian_interval_mass(mu: f64, sigma: f64, interval: &Interval) -> Result<f64> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
    }
    Ok(log_standard_mass(
        (interval.lo - mu) / sigma,
        (interval.hi - mu) / sigma,
    ))
}

/// `P(lo <= N(mu, sigma^2) <= hi)`.
pub fn gaussian_interval_mass(mu: f64, sigma: f64, interval: &Interval) -> Result<f64> {
    Ok(log_gaussian_interval_mass(mu, sigma, interval)?.exp())
}

/// `ln` of the centred-normal mass of a region.
pub fn log_region_mass(sigma: f64, region: &TruncationRegion) -> Result<f64> {
    let mut acc = f64::NEG_INFINITY;
    for iv in region.intervals() {
        acc = log_add_exp(acc, log_gaussian_interval_mass(0.0, sigma, iv)?);
    }
    Ok(acc)
}

/// `P(|Z| >= |z_obs| | Z in region)` for `Z ~ N(0, sigma^2)`.
///
/// The ratio is always formed from log-masses, so regions that sit entirely
/// in a far tail still produce a finite, correctly scaled p-value.
pub fn truncated_two_sided_p(z_obs: f64, sigma: f64, region: &TruncationRegion) -> Result<f64> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
    }
    let tol = 1e-9 * sigma.max(z_obs.abs());
    if !region.contains(z_obs, tol) {
        return Err(Error::Consistency(format!(
            "observed statistic {z_obs} lies outside the truncation region {:?}",
            region.intervals()
        )));
    }
    let log_den = log_region_mass(sigma, region)?;
    if log_den == f64::NEG_INFINITY || log_den.is_nan() {
        return Err(Error::DegenerateRegion(format!(
            "region {:?} has zero mass under N(0, {sigma}^2)",
            region.intervals()
        )));
    }
    let t = z_obs.abs();
    let tails = TruncationRegion::from_intervals(
        vec![
            Interval {
                lo: f64::NEG_INFINITY,
                hi: -t,
            },
            Interval {
                lo: t,
                hi: f64::INFINITY,
            },
        ],
        0.0,
    );
    let log_num = log_region_mass(sigma, &region.intersect(&tails))?;
    Ok((log_num - log_den).exp().clamp(0.0, 1.0))
}
