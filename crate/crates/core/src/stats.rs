//! Small statistics toolbox: binomial proportions with Wilson intervals and
//! Kolmogorov-Smirnov tests.

use serde::{Deserialize, Serialize};

pub const Z95: f64 = 1.959_963_984_540_054;

/// A binomial proportion estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proportion {
    pub successes: u64,
    pub trials: u64,
    pub estimate: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl Proportion {
    pub fn new(successes: u64, trials: u64) -> Self {
        assert!(trials > 0 && successes <= trials, "need 0 <= successes <= trials, trials > 0");
        let p = successes as f64 / trials as f64;
        let (ci_low, ci_high) = wilson(successes, trials, Z95);
        Self { successes, trials, estimate: p, std_error: (p * (1.0 - p) / trials as f64).sqrt(), ci_low, ci_high }
    }

    pub fn from_flags(flags: impl IntoIterator<Item = bool>) -> Self {
        let (mut s, mut n) = (0u64, 0u64);
        for f in flags {
            n += 1;
            s += u64::from(f);
        }
        Self::new(s, n)
    }

    /// Standard error floored at the value for one success or failure, so
    /// that degenerate estimates keep a nonzero scale.
    pub fn std_error_floor(&self) -> f64 {
        let n = self.trials as f64;
        let p = self.estimate.clamp(1.0 / n, 1.0 - 1.0 / n);
        (p * (1.0 - p) / n).sqrt()
    }
}

/// Wilson score interval, clamped to [0, 1].
pub fn wilson(successes: u64, trials: u64, z: f64) -> (f64, f64) {
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let lo = if successes == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if successes == trials { 1.0 } else { (center + half).min(1.0) };
    (lo.min(p), hi.max(p))
}

/// Combined standard error of independent estimates.
pub fn combined_se(ses: &[f64]) -> f64 {
    ses.iter().map(|s| s * s).sum::<f64>().sqrt()
}

/// Standard error of a product of independent estimates, by the delta method.
pub fn product_se(a: f64, se_a: f64, b: f64, se_b: f64) -> f64 {
    ((b * se_a).powi(2) + (a * se_b).powi(2) + (se_a * se_b).powi(2)).sqrt()
}

/// Asymptotic Kolmogorov tail probability P(K > lambda).
pub fn kolmogorov_tail(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = 2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

fn ks_p_value(d: f64, n_eff: f64) -> f64 {
    let sq = n_eff.sqrt();
    kolmogorov_tail((sq + 0.12 + 0.11 / sq) * d)
}

/// One-sample test of `sample` against a continuous CDF.
pub fn ks_one_sample(sample: &[f64], cdf: impl Fn(f64) -> f64) -> KsResult {
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    KsResult { statistic: d, p_value: ks_p_value(d, n) }
}

/// Two-sample test. Ties are handled by evaluating both empirical CDFs
/// after each distinct value, which makes the test conservative for
/// discrete data.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsResult {
    let mut xa = a.to_vec();
    let mut xb = b.to_vec();
    xa.sort_by(f64::total_cmp);
    xb.sort_by(f64::total_cmp);
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < xa.len() && j < xb.len() {
        let v = xa[i].min(xb[j]);
        while i < xa.len() && xa[i] <= v {
            i += 1;
        }
        while j < xb.len() && xb[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    KsResult { statistic: d, p_value: ks_p_value(d, na * nb / (na + nb)) }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_bounds() {
        let p = Proportion::new(0, 100);
        assert_eq!(p.ci_low, 0.0);
        assert!(p.ci_high > 0.0 && p.ci_high < 0.05);
        let p = Proportion::new(100, 100);
        assert_eq!(p.ci_high, 1.0);
        let p = Proportion::new(37, 100);
        assert!(p.ci_low < 0.37 && 0.37 < p.ci_high);
        assert!((p.ci_low - 0.2813).abs() < 1e-3 && (p.ci_high - 0.4687).abs() < 1e-3);
    }

    #[test]
    fn kolmogorov_values() {
        assert!((kolmogorov_tail(1.358) - 0.05).abs() < 1e-3);
        assert!((kolmogorov_tail(1.949) - 0.001).abs() < 1e-4);
    }

    #[test]
    fn ks_detects_shift() {
        let a: Vec<f64> = (0..500).map(|i| i as f64 / 500.0).collect();
        let b: Vec<f64> = (0..500).map(|i| 0.3 + i as f64 / 500.0).collect();
        assert!(ks_two_sample(&a, &a).p_value > 0.99);
        assert!(ks_two_sample(&a, &b).p_value < 1e-6);
        assert!(ks_one_sample(&a, |x| x.clamp(0.0, 1.0)).p_value > 0.9);
    }
}
