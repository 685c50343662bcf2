//! Omnithermal approximation: one pooled process estimates `mu(shell) / mu(A(beta))`
//! for every `beta` in the family's range at once.
//!
//! The counting process `N_P(t) = #{b in P : b >= beta_shell - t}` jumps at
//! each pooled point; `exp(N_P(beta_shell - beta) / k)` is the estimate at
//! `beta`. Anchoring with a known `ln mu(center)` turns the staircase into an
//! approximation of the partition function itself.

use std::io::Write;

use serde::Serialize;

use crate::bounds::{tail_formula, TailBound, SUP_RATIO_LIMIT};
use crate::error::{domain, invalid, Result};
use crate::tpa::PooledProcess;

pub const CURVE_SCHEMA: &str = "tpa.curve.v1";
pub const PARTITION_CURVE_SCHEMA: &str = "tpa.partition-curve.v1";

/// Right-continuous (in `t`) staircase over `[beta_center, beta_shell]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepFunction {
    pub beta_shell: f64,
    pub beta_center: f64,
    pub k: u64,
    /// Distinct pooled parameters, descending.
    pub breakpoints: Vec<f64>,
    /// `N_P` on each piece: `counts[0]` above the first breakpoint, `counts[j]`
    /// from breakpoint `j - 1` (inclusive) down to breakpoint `j` (exclusive).
    pub counts: Vec<u64>,
    /// `ln mu(center)` when the curve is anchored to an absolute scale.
    pub log_anchor: Option<f64>,
}

impl StepFunction {
    fn check_beta(&self, beta: f64) -> Result<()> {
        if beta >= self.beta_center && beta <= self.beta_shell {
            Ok(())
        } else {
            Err(invalid(format!(
                "beta {beta} outside [{}, {}]",
                self.beta_center, self.beta_shell
            )))
        }
    }

    /// `N` over the whole range.
    pub fn total(&self) -> u64 {
        *self.counts.last().unwrap()
    }

    /// `#{b in P : b >= beta}`.
    pub fn count_at_beta(&self, beta: f64) -> Result<u64> {
        self.check_beta(beta)?;
        let above = self.breakpoints.partition_point(|&b| b >= beta);
        Ok(self.counts[above])
    }

    /// `N_P(t)` for `t` in `[0, beta_shell - beta_center]`.
    pub fn count_at_t(&self, t: f64) -> Result<u64> {
        if t < 0.0 {
            return Err(invalid(format!("t = {t} is negative")));
        }
        let beta = (self.beta_shell - t).max(self.beta_center);
        self.count_at_beta(beta)
    }

    /// `ln` of the estimate of `mu(shell) / mu(A(beta))`.
    pub fn log_ratio_at(&self, beta: f64) -> Result<f64> {
        Ok(self.count_at_beta(beta)? as f64 / self.k as f64)
    }

    pub fn ratio_at(&self, beta: f64) -> Result<f64> {
        Ok(self.log_ratio_at(beta)?.exp())
    }

    /// `ln Z_hat(beta) = ln mu(center) + N/k - N_P(beta_shell - beta)/k`.
    pub fn log_partition_at(&self, beta: f64) -> Result<f64> {
        let anchor = self
            .log_anchor
            .ok_or_else(|| invalid("curve is not anchored; use anchored_partition_curve"))?;
        let k = self.k as f64;
        Ok(anchor + self.total() as f64 / k - self.count_at_beta(beta)? as f64 / k)
    }

    /// `(beta, N_P)` at the shell, at each breakpoint (post-jump), and at the center.
    pub fn knots(&self) -> Vec<(f64, u64)> {
        let mut rows = Vec::with_capacity(self.breakpoints.len() + 2);
        rows.push((self.beta_shell, self.counts[0]));
        for (j, &b) in self.breakpoints.iter().enumerate() {
            if b < self.beta_shell {
                rows.push((b, self.counts[j + 1]));
            } else {
                rows[0].1 = self.counts[j + 1];
            }
        }
        if self.beta_center < rows.last().unwrap().0 {
            rows.push((self.beta_center, self.total()));
        }
        rows
    }
}

/// Builds `N_P` from a pool.
pub fn counting_process(pool: &PooledProcess) -> StepFunction {
    let mut breakpoints: Vec<f64> = Vec::new();
    let mut counts = vec![0u64];
    for &b in &pool.points {
        if breakpoints.last() == Some(&b) {
            *counts.last_mut().unwrap() += 1;
        } else {
            let prev = *counts.last().unwrap();
            breakpoints.push(b);
            counts.push(prev + 1);
        }
    }
    StepFunction {
        beta_shell: pool.beta_shell,
        beta_center: pool.beta_center,
        k: pool.k,
        breakpoints,
        counts,
        log_anchor: None,
    }
}

/// `exp(N_P(beta_shell - beta) / k)`, the estimate of `mu(shell) / mu(A(beta))`.
pub fn omnithermal_estimate(pool: &PooledProcess, beta: f64) -> Result<f64> {
    counting_process(pool).ratio_at(beta)
}

/// Staircase approximation of `mu(A(beta))` anchored at a known `ln mu(center)`.
pub fn anchored_partition_curve(pool: &PooledProcess, log_center_measure: f64) -> Result<StepFunction> {
    if !log_center_measure.is_finite() {
        return Err(invalid("log center measure must be finite"));
    }
    let mut curve = counting_process(pool);
    curve.log_anchor = Some(log_center_measure);
    Ok(curve)
}

/// Bound on `P(sup_t |N_P(t)/k - t| >= eps_tilde)` for a rate-`k` process on `[0, lambda]`.
pub fn sup_deviation_bound(eps_tilde: f64, lambda: f64, k: u64) -> Result<TailBound> {
    tail_formula(eps_tilde, lambda, k, SUP_RATIO_LIMIT)
}

/// `sup_{t in [0, lambda]} |N_P(t)/k - t|` given the jump locations in `t` (ascending).
pub fn sup_deviation(jumps: &[f64], k: u64, lambda: f64) -> f64 {
    let k = k as f64;
    let mut worst: f64 = 0.0;
    for (i, &t) in jumps.iter().enumerate() {
        let before = i as f64 / k - t;
        let after = (i as f64 + 1.0) / k - t;
        worst = worst.max(before.abs()).max(after.abs());
    }
    worst.max((jumps.len() as f64 / k - lambda).abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OmniPlan {
    pub epsilon: f64,
    pub delta: f64,
    pub lambda_upper: f64,
    pub k_required: u64,
}

/// Runs needed for an `(epsilon, delta)` omnithermal approximation:
/// `ceil(2 lambda (3/epsilon + 1/epsilon^2) ln(2/delta))`.
pub fn plan_runs(epsilon: f64, delta: f64, lambda_upper: f64) -> Result<OmniPlan> {
    if !(epsilon > 0.0 && epsilon < 0.3) {
        return Err(domain(format!("epsilon must lie in (0, 0.3), got {epsilon}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(domain(format!("delta must lie in (0, 1), got {delta}")));
    }
    if !(lambda_upper > 1.0) || !lambda_upper.is_finite() {
        return Err(domain(format!("lambda upper bound must exceed 1, got {lambda_upper}")));
    }
    let k = 2.0 * lambda_upper * (3.0 / epsilon + 1.0 / (epsilon * epsilon)) * (2.0 / delta).ln();
    Ok(OmniPlan { epsilon, delta, lambda_upper, k_required: k.ceil() as u64 })
}

/// Prior on the inverse temperature.
pub enum Prior {
    Uniform { lower: f64, upper: f64 },
    PointMass(f64),
    Density(Box<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl Prior {
    fn density(&self, b: f64) -> f64 {
        match self {
            Prior::Uniform { lower, upper } => {
                if b >= *lower && b <= *upper {
                    1.0 / (upper - lower)
                } else {
                    0.0
                }
            }
            Prior::PointMass(_) => 0.0,
            Prior::Density(f) => f(b),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvidenceIntegral {
    pub value: f64,
    /// Number of trapezoid panels (0 for a point-mass prior).
    pub intervals: usize,
    pub step: f64,
}

/// `int_0^b_max prior(b) exp(-b H(X)) / Z(b) db` with `ln Z` supplied by `log_z`.
///
/// Composite trapezoid with panels no wider than `step`.
pub fn evidence_integral_with<L>(
    log_z: L,
    prior: &Prior,
    h_observed: f64,
    b_max: f64,
    step: f64,
) -> Result<EvidenceIntegral>
where
    L: Fn(f64) -> Result<f64>,
{
    let integrand = |b: f64| -> Result<f64> { Ok((-b * h_observed - log_z(b)?).exp()) };
    if let Prior::PointMass(b0) = prior {
        return Ok(EvidenceIntegral { value: integrand(*b0)?, intervals: 0, step: 0.0 });
    }
    if !(b_max > 0.0) || !(step > 0.0) {
        return Err(invalid(format!("need b_max > 0 and step > 0, got {b_max} and {step}")));
    }
    let intervals = (b_max / step).ceil() as usize;
    let h = b_max / intervals as f64;
    let mut sum = 0.0;
    for i in 0..=intervals {
        let b = if i == intervals { b_max } else { i as f64 * h };
        let weight = if i == 0 || i == intervals { 0.5 } else { 1.0 };
        let p = prior.density(b);
        if p != 0.0 {
            sum += weight * p * integrand(b)?;
        }
    }
    Ok(EvidenceIntegral { value: sum * h, intervals, step: h })
}

/// Evidence integral using an anchored omnithermal curve for `Z(b)`.
pub fn evidence_integral(
    curve: &StepFunction,
    prior: &Prior,
    h_observed: f64,
    b_max: f64,
    step: f64,
) -> Result<EvidenceIntegral> {
    curve
        .log_anchor
        .ok_or_else(|| invalid("evidence needs an anchored partition curve"))?;
    let upper = match prior {
        Prior::PointMass(b0) => *b0,
        _ => b_max,
    };
    if curve.beta_center > 0.0 || upper > curve.beta_shell {
        return Err(invalid(format!(
            "curve domain [{}, {}] does not cover [0, {upper}]",
            curve.beta_center, curve.beta_shell
        )));
    }
    evidence_integral_with(|b| curve.log_partition_at(b), prior, h_observed, b_max, step)
}

/// CSV of the ratio curve: `beta,t,N_P,estimate,ln_estimate`.
pub fn write_curve_csv<W: Write>(mut out: W, curve: &StepFunction) -> Result<()> {
    writeln!(out, "# schema={CURVE_SCHEMA} k={}", curve.k)?;
    writeln!(out, "beta,t,N_P,estimate,ln_estimate")?;
    let k = curve.k as f64;
    for (beta, n_p) in curve.knots() {
        let ln = n_p as f64 / k;
        writeln!(out, "{beta},{},{n_p},{},{ln}", curve.beta_shell - beta, ln.exp())?;
    }
    Ok(())
}

/// CSV of the anchored partition-function curve: `beta,t,N_P,z_hat,ln_z_hat`.
pub fn write_partition_curve_csv<W: Write>(mut out: W, curve: &StepFunction) -> Result<()> {
    writeln!(out, "# schema={PARTITION_CURVE_SCHEMA} k={}", curve.k)?;
    writeln!(out, "beta,t,N_P,z_hat,ln_z_hat")?;
    for (beta, n_p) in curve.knots() {
        let ln = curve.log_partition_at(beta)?;
        writeln!(out, "{beta},{},{n_p},{},{ln}", curve.beta_shell - beta, ln.exp())?;
    }
    Ok(())
}
