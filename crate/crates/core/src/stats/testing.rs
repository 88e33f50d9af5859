//! Goodness-of-fit and binomial interval helpers for calibration checks.

use statrs::distribution::{Beta, ContinuousCDF};

/// Result of a one-sample Kolmogorov-Smirnov test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsOutcome {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Kolmogorov survival function `P(K > lambda)`.
fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// KS test of `samples` against a continuous CDF.
pub fn ks_test<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> KsOutcome {
    let mut xs: Vec<f64> = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    let nf = n as f64;
    let statistic = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / nf).max((i + 1) as f64 / nf - f)
        })
        .fold(0.0, f64::max);
    // Stephens' small-sample correction
    let sqrt_n = nf.sqrt();
    let lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * statistic;
    KsOutcome {
        statistic,
        p_value: kolmogorov_survival(lambda),
        n,
    }
}

pub fn ks_uniform(samples: &[f64]) -> KsOutcome {
    ks_test(samples, |x| x.clamp(0.0, 1.0))
}

/// Exact (Clopper-Pearson) two-sided binomial interval at `level`.
pub fn clopper_pearson(successes: usize, trials: usize, level: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let a = (1.0 - level) / 2.0;
    let k = successes as f64;
    let n = trials as f64;
    let lo = if successes == 0 {
        0.0
    } else {
        Beta::new(k, n - k + 1.0).map(|b| b.inverse_cdf(a)).unwrap_or(0.0)
    };
    let hi = if successes == trials {
        1.0
    } else {
        Beta::new(k + 1.0, n - k).map(|b| b.inverse_cdf(1.0 - a)).unwrap_or(1.0)
    };
    (lo, hi)
}
