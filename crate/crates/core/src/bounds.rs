//! Poisson tail bounds and the two-phase `(epsilon, delta)` approximation scheme.

use serde::{Deserialize, Serialize};

use crate::error::{domain, invalid, Result, TpaError};
use crate::family::NestedFamily;
use crate::rng::{phase, RngStreams};
use crate::tpa::{pool_runs, run_batch, PooledProcess};

/// Largest `eps_tilde / lambda` accepted by [`poisson_tail_bound`].
pub const TAIL_RATIO_LIMIT: f64 = 2.3;

/// Validity limit of the cubic bound `e^a - 1 - a <= (a^2 / 2)(1 + a)` used for the
/// sup-deviation bound of the whole counting process.
pub const SUP_RATIO_LIMIT: f64 = 2.318_58;

/// Value of `2 exp(-(k eps^2 / (2 lambda)) (1 - eps / lambda))`.
///
/// The raw value can exceed 1 (the bound is then vacuous); [`TailBound::probability`]
/// clamps it for reporting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailBound {
    pub value: f64,
}

impl TailBound {
    pub fn probability(&self) -> f64 {
        self.value.clamp(0.0, 1.0)
    }
}

pub(crate) fn tail_formula(eps_tilde: f64, lambda: f64, k: u64, limit: f64) -> Result<TailBound> {
    if !(eps_tilde > 0.0) || !(lambda > 0.0) {
        return Err(invalid(format!(
            "need eps_tilde > 0 and lambda > 0, got {eps_tilde} and {lambda}"
        )));
    }
    if k == 0 {
        return Err(invalid("k must be positive"));
    }
    let ratio = eps_tilde / lambda;
    if ratio > limit {
        return Err(domain(format!(
            "eps_tilde / lambda = {ratio} exceeds the validity limit {limit}"
        )));
    }
    let exponent = -(k as f64) * eps_tilde * eps_tilde / (2.0 * lambda) * (1.0 - ratio);
    Ok(TailBound { value: 2.0 * exponent.exp() })
}

/// Bound on `P(|N/k - lambda| >= eps_tilde)` for `N ~ Poisson(k lambda)`.
pub fn poisson_tail_bound(eps_tilde: f64, lambda: f64, k: u64) -> Result<TailBound> {
    tail_formula(eps_tilde, lambda, k, TAIL_RATIO_LIMIT)
}

/// Target relative error and failure probability for the two-phase scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RasConfig {
    pub epsilon: f64,
    pub delta: f64,
}

impl RasConfig {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(invalid(format!("epsilon must be positive, got {epsilon}")));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(invalid(format!("delta must lie in (0, 1), got {delta}")));
        }
        let cfg = Self { epsilon, delta };
        if cfg.epsilon_a() >= 1.0 {
            return Err(domain(format!(
                "ln(1 + epsilon) = {} must be below 1 (epsilon < e - 1)",
                cfg.epsilon_a()
            )));
        }
        Ok(cfg)
    }

    /// Additive error target on the log scale, `ln(1 + epsilon)`.
    pub fn epsilon_a(&self) -> f64 {
        self.epsilon.ln_1p()
    }
}

/// Phase I run count `ceil(2 ea^-2 (1 - ea)^-1 ln(2 / delta))`.
pub fn phase1_k(config: &RasConfig) -> Result<u64> {
    let ea = config.epsilon_a();
    if ea >= 1.0 {
        return Err(domain("epsilon_a must be below 1"));
    }
    let k = 2.0 / (ea * ea) / (1.0 - ea) * (2.0 / config.delta).ln();
    Ok(k.ceil() as u64)
}

/// Phase II run count `ceil(N1 / (1 - ea))`.
pub fn phase2_k(config: &RasConfig, n1: u64) -> u64 {
    (n1 as f64 / (1.0 - config.epsilon_a())).ceil() as u64
}

/// Expected `N1 + N2` when the true log ratio is `lambda`.
pub fn expected_total_samples(config: &RasConfig, lambda: f64) -> Result<f64> {
    let ea = config.epsilon_a();
    let ln_term = (2.0 / config.delta).ln();
    Ok(phase1_k(config)? as f64 * lambda
        + 2.0 / ((1.0 - ea).powi(2) * ea * ea) * ln_term * lambda * lambda)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RasResult {
    /// `exp(N2 / k2)`.
    pub estimate: f64,
    pub k1: u64,
    pub n1: u64,
    pub k2: u64,
    pub n2: u64,
    /// `N1 + N2`, the number of interior points produced.
    pub total_samples: u64,
    /// Every conditional draw, including the terminal one of each run.
    pub total_draws: u64,
    /// Whether the family asserted `mu(shell) / mu(center) >= e`.
    pub precondition_asserted: bool,
    #[serde(skip)]
    pub phase_two_pool: Option<PooledProcess>,
}

/// Runs the two-phase scheme: a rough pass sizes the second, refined pass.
///
/// Phase I uses stream phase [`phase::RAS_PHASE_ONE`], Phase II [`phase::RAS_PHASE_TWO`].
pub fn run_ras<F>(family: &F, config: &RasConfig, streams: &RngStreams, cap: usize) -> Result<RasResult>
where
    F: NestedFamily + ?Sized,
{
    let k1 = phase1_k(config)?;
    let first = run_batch(family, streams, phase::RAS_PHASE_ONE, k1, cap)?;
    let n1 = pool_runs(&first, family)?.n();
    if n1 == 0 {
        return Err(TpaError::EmptyPhaseOne { k1 });
    }
    let k2 = phase2_k(config, n1);
    let second = run_batch(family, streams, phase::RAS_PHASE_TWO, k2, cap)?;
    let pool = pool_runs(&second, family)?;
    let n2 = pool.n();
    let estimate = pool.log_ratio_estimate().ratio();
    Ok(RasResult {
        estimate,
        k1,
        n1,
        k2,
        n2,
        total_samples: n1 + n2,
        total_draws: n1 + n2 + k1 + k2,
        precondition_asserted: family.ratio_at_least_e(),
        phase_two_pool: Some(pool),
    })
}

/// Constant in the acceptance-rejection sample size `ceil(C eps^-2 ln(2 / delta))`.
///
/// With hit probability `p >= 1/e`, the multiplicative Chernoff bound
/// `P(|p_hat - p| >= eps p) <= 2 exp(-n p eps^2 / 3)` is below `delta` once
/// `n >= 3e eps^-2 ln(2 / delta)`.
pub const AR_SAMPLE_CONSTANT: f64 = 3.0 * std::f64::consts::E;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArEstimate {
    /// `1 / p_hat`, an estimate of `mu(shell) / mu(center)`.
    pub ratio: f64,
    pub hits: u64,
    pub samples: u64,
}

pub fn ar_sample_size(epsilon: f64, delta: f64) -> Result<u64> {
    if !(epsilon > 0.0) || !(delta > 0.0 && delta < 1.0) {
        return Err(invalid(format!(
            "need epsilon > 0 and delta in (0, 1), got {epsilon} and {delta}"
        )));
    }
    Ok((AR_SAMPLE_CONSTANT / (epsilon * epsilon) * (2.0 / delta).ln()).ceil() as u64)
}

/// Acceptance-rejection for small ratios: draw from the shell and count center hits.
pub fn ar_ratio_estimate<F>(family: &F, epsilon: f64, delta: f64, streams: &RngStreams) -> Result<ArEstimate>
where
    F: NestedFamily + ?Sized,
{
    ar_ratio_with_samples(family, ar_sample_size(epsilon, delta)?, streams)
}

pub fn ar_ratio_with_samples<F>(family: &F, samples: u64, streams: &RngStreams) -> Result<ArEstimate>
where
    F: NestedFamily + ?Sized,
{
    if samples == 0 {
        return Err(invalid("acceptance-rejection needs at least one sample"));
    }
    let shell = family.beta_shell();
    let center = family.beta_center();
    let mut rng = streams.stream(phase::ACCEPT_REJECT, 0);
    let mut hits = 0u64;
    for _ in 0..samples {
        if family.sample_within(shell, &mut rng)?.beta <= center {
            hits += 1;
        }
    }
    if hits == 0 {
        return Err(TpaError::NoCenterHits { samples });
    }
    Ok(ArEstimate { ratio: samples as f64 / hits as f64, hits, samples })
}
