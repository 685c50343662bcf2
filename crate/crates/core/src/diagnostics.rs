//! Oracle-backed checks that a sampler really produces a Poisson process on the log-measure axis.
//!
//! These need `ln mu(A(beta))` in closed form, so they only apply to analytic
//! test families and to models small enough for exact enumeration.

use serde::Serialize;

use crate::error::{Result, TpaError};
use crate::family::NestedFamily;
use crate::stats::{
    ks_critical_value, ks_p_value, ks_statistic, normal_quantile, poisson_chi_square,
    ChiSquareReport,
};
use crate::tpa::{PooledProcess, RunTrace};

/// Below this many spacings the KS test is reported but flagged as weak.
pub const LOW_POWER_SPACINGS: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KsReport {
    pub n: usize,
    pub statistic: f64,
    pub p_value: f64,
    pub significance: f64,
    pub critical_value: f64,
    pub passed: bool,
    pub low_power: bool,
}

fn oracle<F: NestedFamily + ?Sized>(family: &F, beta: f64) -> Result<f64> {
    family
        .log_measure(beta)
        .ok_or_else(|| TpaError::Unsupported("family has no closed-form log-measure".into()))
}

/// Positions of the pooled points on the log-measure axis, measured down from
/// the shell: `t(shell) - t(b)`, ascending.
pub fn log_measure_offsets<F>(pool: &PooledProcess, family: &F) -> Result<Vec<f64>>
where
    F: NestedFamily + ?Sized,
{
    let top = oracle(family, pool.beta_shell)?;
    pool.points
        .iter()
        .map(|&b| oracle(family, b).map(|t| top - t))
        .collect()
}

/// Consecutive log-measure gaps of the pooled process, starting from the shell, scaled by `k`.
pub fn scaled_spacings<F>(pool: &PooledProcess, family: &F) -> Result<Vec<f64>>
where
    F: NestedFamily + ?Sized,
{
    let offsets = log_measure_offsets(pool, family)?;
    let k = pool.k as f64;
    let mut prev = 0.0;
    Ok(offsets
        .into_iter()
        .map(|s| {
            let gap = (s - prev) * k;
            prev = s;
            gap
        })
        .collect())
}

/// KS test of the scaled log-measure spacings against Exp(1).
pub fn spacing_diagnostic<F>(pool: &PooledProcess, family: &F, significance: f64) -> Result<KsReport>
where
    F: NestedFamily + ?Sized,
{
    let spacings = scaled_spacings(pool, family)?;
    let n = spacings.len();
    if n == 0 {
        return Err(TpaError::InvalidArgument("no spacings to test".into()));
    }
    let statistic = ks_statistic(&spacings, |x| if x <= 0.0 { 0.0 } else { -(-x).exp_m1() });
    let critical_value = ks_critical_value(significance, n);
    Ok(KsReport {
        n,
        statistic,
        p_value: ks_p_value(statistic, n),
        significance,
        critical_value,
        passed: statistic < critical_value,
        low_power: n < LOW_POWER_SPACINGS,
    })
}

/// Chi-square test of per-run counts against Poisson(`lambda`).
pub fn count_chi_square(traces: &[RunTrace], lambda: f64) -> ChiSquareReport {
    let counts: Vec<u64> = traces.iter().map(|t| t.count).collect();
    poisson_chi_square(&counts, lambda)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IncrementReport {
    pub width: f64,
    pub intervals_per_pool: usize,
    pub increments: usize,
    pub chi_square: ChiSquareReport,
    pub lag_one_correlation: f64,
    pub correlation_bound: f64,
    pub passed: bool,
}

/// Counts of pooled points in consecutive disjoint log-measure windows of the given width.
pub fn window_increments<F>(pool: &PooledProcess, family: &F, width: f64) -> Result<Vec<u64>>
where
    F: NestedFamily + ?Sized,
{
    let span = oracle(family, pool.beta_shell)? - oracle(family, pool.beta_center)?;
    let windows = (span / width).floor() as usize;
    let mut counts = vec![0u64; windows];
    for s in log_measure_offsets(pool, family)? {
        let w = (s / width).floor() as usize;
        if w < windows {
            counts[w] += 1;
        }
    }
    Ok(counts)
}

/// Checks that increments over disjoint windows are Poisson(`k * width`) and uncorrelated.
pub fn increment_battery<F>(
    pools: &[PooledProcess],
    family: &F,
    width: f64,
    significance: f64,
) -> Result<IncrementReport>
where
    F: NestedFamily + ?Sized,
{
    let first = pools
        .first()
        .ok_or_else(|| TpaError::InvalidArgument("no pools supplied".into()))?;
    let k = first.k;
    if pools.iter().any(|p| p.k != k) {
        return Err(TpaError::InvalidArgument("pools must share the same k".into()));
    }
    let per_pool: Vec<Vec<u64>> = pools
        .iter()
        .map(|p| window_increments(p, family, width))
        .collect::<Result<_>>()?;
    let windows = per_pool[0].len();
    if windows < 2 {
        return Err(TpaError::InvalidArgument(format!(
            "need at least two windows of width {width} inside the family's log range"
        )));
    }
    let all: Vec<u64> = per_pool.iter().flatten().copied().collect();
    let chi_square = poisson_chi_square(&all, k as f64 * width);

    let pairs: Vec<(f64, f64)> = per_pool
        .iter()
        .flat_map(|c| c.windows(2).map(|w| (w[0] as f64, w[1] as f64)))
        .collect();
    let corr = pearson(&pairs);
    let correlation_bound = normal_quantile(1.0 - significance / 2.0) / (pairs.len() as f64).sqrt();
    let passed = chi_square.passes(significance) && corr.abs() < correlation_bound;
    Ok(IncrementReport {
        width,
        intervals_per_pool: windows,
        increments: all.len(),
        chi_square,
        lag_one_correlation: corr,
        correlation_bound,
        passed,
    })
}

fn pearson(pairs: &[(f64, f64)]) -> f64 {
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}
