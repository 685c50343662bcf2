//! Numerical and goodness-of-fit helpers shared by the estimators and test batteries.

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};
use statrs::function::gamma::{gamma_lr, ln_gamma};

/// Numerically stable `ln(sum(exp(x)))`. Returns `-inf` for an empty slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Streaming log-sum-exp accumulator.
#[derive(Debug, Clone, Copy)]
pub struct LogSumExp {
    max: f64,
    sum: f64,
}

impl Default for LogSumExp {
    fn default() -> Self {
        Self { max: f64::NEG_INFINITY, sum: 0.0 }
    }
}

impl LogSumExp {
    pub fn push(&mut self, x: f64) {
        if x <= self.max {
            self.sum += (x - self.max).exp();
        } else {
            self.sum = self.sum * (self.max - x).exp() + 1.0;
            self.max = x;
        }
    }

    /// The sum on the linear scale, `exp(max) * sum`; overflows where the log value would not.
    pub fn linear_value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            0.0
        } else {
            self.sum * self.max.exp()
        }
    }

    pub fn value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.sum.ln()
        }
    }
}

/// Upper standard-normal quantile: `z` with `P(W <= z) = p`.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Regularized lower incomplete gamma `P(shape, x)`.
pub fn gamma_cdf(shape: f64, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        gamma_lr(shape, x)
    }
}

/// Quantile of the Gamma(shape, 1) law, by bracketing bisection polished with Newton steps.
pub fn gamma_quantile(p: f64, shape: f64) -> f64 {
    assert!(shape > 0.0, "gamma shape must be positive");
    assert!((0.0..1.0).contains(&p), "gamma quantile needs p in [0, 1)");
    if p == 0.0 {
        return 0.0;
    }
    let mut hi = shape.max(1.0);
    while gamma_cdf(shape, hi) < p {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if gamma_cdf(shape, mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    let mut x = 0.5 * (lo + hi);
    let log_norm = ln_gamma(shape);
    for _ in 0..3 {
        let density = ((shape - 1.0) * x.ln() - x - log_norm).exp();
        if !(density > 0.0) {
            break;
        }
        let next = x - (gamma_cdf(shape, x) - p) / density;
        if next > lo && next < hi {
            x = next;
        }
    }
    x
}

/// Survival function of the chi-square law.
pub fn chi_square_sf(statistic: f64, dof: f64) -> f64 {
    ChiSquared::new(dof).expect("positive degrees of freedom").sf(statistic)
}

/// Poisson probability mass `P(X = n)` for mean `mean`.
pub fn poisson_pmf(n: u64, mean: f64) -> f64 {
    if mean == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    let n = n as f64;
    (n * mean.ln() - mean - ln_gamma(n + 1.0)).exp()
}

/// Result of Pearson's chi-square goodness-of-fit test.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChiSquareReport {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    pub bins: usize,
}

impl ChiSquareReport {
    pub fn passes(&self, significance: f64) -> bool {
        self.p_value > significance
    }
}

/// Chi-square test of observed counts against Poisson(`mean`).
///
/// Bins are `0, 1, ..., m` plus a right tail; neighbouring bins are merged
/// until every expected count is at least 5.
pub fn poisson_chi_square(samples: &[u64], mean: f64) -> ChiSquareReport {
    let total = samples.len() as f64;
    let max_seen = samples.iter().copied().max().unwrap_or(0);
    let mut observed = vec![0u64; max_seen as usize + 1];
    for &s in samples {
        observed[s as usize] += 1;
    }

    // Expected mass per value; the last bin collects the whole right tail.
    let mut groups: Vec<(f64, f64)> = Vec::new();
    let (mut exp_acc, mut obs_acc) = (0.0, 0.0);
    let mut cumulative = 0.0;
    for (n, &obs) in observed.iter().enumerate() {
        let p = poisson_pmf(n as u64, mean);
        cumulative += p;
        exp_acc += p * total;
        obs_acc += obs as f64;
        if exp_acc >= 5.0 {
            groups.push((obs_acc, exp_acc));
            exp_acc = 0.0;
            obs_acc = 0.0;
        }
    }
    exp_acc += (1.0 - cumulative).max(0.0) * total;
    if let Some(last) = groups.last_mut() {
        if exp_acc < 5.0 {
            last.0 += obs_acc;
            last.1 += exp_acc;
        } else {
            groups.push((obs_acc, exp_acc));
        }
    } else {
        groups.push((obs_acc, exp_acc));
    }

    let statistic = groups
        .iter()
        .map(|&(o, e)| if e > 0.0 { (o - e).powi(2) / e } else { 0.0 })
        .sum();
    let dof = groups.len().saturating_sub(1);
    let p_value = if dof == 0 { 1.0 } else { chi_square_sf(statistic, dof as f64) };
    ChiSquareReport { statistic, dof, p_value, bins: groups.len() }
}

/// Kolmogorov–Smirnov statistic of a sample against a continuous CDF.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i as f64 + 1.0) / n - f)
        })
        .fold(0.0, f64::max)
}

/// Survival function of the limiting Kolmogorov distribution.
fn kolmogorov_sf(x: f64) -> f64 {
    if x < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=100 {
        let j = j as f64;
        let term = 2.0 * (-1f64).powf(j - 1.0) * (-2.0 * j * j * x * x).exp();
        sum += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

fn ks_scale(n: usize) -> f64 {
    let root = (n as f64).sqrt();
    root + 0.12 + 0.11 / root
}

/// Approximate p-value of a KS statistic `d` for sample size `n` (Stephens' correction).
pub fn ks_p_value(d: f64, n: usize) -> f64 {
    kolmogorov_sf(ks_scale(n) * d)
}

/// Critical KS distance at the given significance level.
pub fn ks_critical_value(significance: f64, n: usize) -> f64 {
    let (mut lo, mut hi) = (0.2, 5.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if kolmogorov_sf(mid) > significance {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi) / ks_scale(n)
}

/// Sample mean and (n - 1)-normalized standard deviation.
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
