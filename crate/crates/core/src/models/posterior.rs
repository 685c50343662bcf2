//! Bayesian evidence through a family of balls shrinking onto a center point.
//!
//! `A(beta)` is the ball of radius `beta` around `c` and
//! `mu(A(beta)) = int_{A(beta)} f`. A run from radius `R` down to `eps`
//! estimates `Z(R) / Z(eps)`, and a plain Monte Carlo average over the small
//! ball estimates `Z(eps)`; the product estimates the evidence.
//!
//! The bundled density `f(x) = exp(-|x - c|_1)` has closed-form ball masses
//! at every radius, which makes every statistical property checkable.

use std::sync::Arc;

use rand::distr::Open01;
use rand::Rng;
use serde::Serialize;
use statrs::function::gamma::{gamma_ur, ln_gamma};

use crate::error::{invalid, Result, TpaError};
use crate::family::{Draw, NestedFamily};
use crate::rng::{phase, RngStreams};
use crate::stats::gamma_cdf;
use crate::tpa::{pool_runs, run_batch, LogRatioEstimate};

/// Norm defining the balls. `L1` is the default; `LInf` gives axis-aligned boxes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum BallNorm {
    #[default]
    L1,
    LInf,
}

pub type DensityFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum Density {
    /// `exp(-|x - c|_1)`.
    ExpL1,
    /// A constant positive value.
    Constant(f64),
    /// Arbitrary nonnegative density; no restricted sampler is available for it.
    Custom(DensityFn),
}

impl std::fmt::Debug for Density {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Density::ExpL1 => f.write_str("ExpL1"),
            Density::Constant(v) => write!(f, "Constant({v})"),
            Density::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// Distance from `y` to `c` in the given norm. Errors on a dimension mismatch.
pub fn distance(norm: BallNorm, y: &[f64], c: &[f64]) -> Result<f64> {
    if y.len() != c.len() {
        return Err(invalid(format!("point has dimension {} but center has {}", y.len(), c.len())));
    }
    let diffs = y.iter().zip(c).map(|(a, b)| (a - b).abs());
    Ok(match norm {
        BallNorm::L1 => diffs.sum(),
        BallNorm::LInf => diffs.fold(0.0, f64::max),
    })
}

/// `inf { beta : y in A(beta) }` for L1 balls, i.e. `|y - c|_1`.
pub fn beta_of_point(y: &[f64], c: &[f64]) -> Result<f64> {
    distance(BallNorm::L1, y, c)
}

#[derive(Debug, Clone)]
pub struct L1BallFamily {
    center: Vec<f64>,
    density: Density,
    center_radius: f64,
    shell_radius: f64,
    norm: BallNorm,
}

impl L1BallFamily {
    pub fn new(center: Vec<f64>, density: Density, center_radius: f64, shell_radius: f64) -> Result<Self> {
        Self::with_norm(center, density, center_radius, shell_radius, BallNorm::L1)
    }

    pub fn with_norm(
        center: Vec<f64>,
        density: Density,
        center_radius: f64,
        shell_radius: f64,
        norm: BallNorm,
    ) -> Result<Self> {
        if center.is_empty() {
            return Err(invalid("dimension must be at least 1"));
        }
        if !(center_radius > 0.0) || !center_radius.is_finite() {
            return Err(invalid(format!("center radius must be positive, got {center_radius}")));
        }
        if !(shell_radius >= center_radius) || !shell_radius.is_finite() {
            return Err(invalid(format!(
                "shell radius {shell_radius} must be finite and at least the center radius {center_radius}"
            )));
        }
        if let Density::Constant(v) = density {
            if !(v > 0.0) {
                return Err(invalid(format!("constant density must be positive, got {v}")));
            }
        }
        Ok(Self { center, density, center_radius, shell_radius, norm })
    }

    /// The bundled test model: `f(x) = exp(-|x|_1)` around the origin in `dim` dimensions.
    pub fn exp_l1(dim: usize, center_radius: f64, shell_radius: f64) -> Result<Self> {
        Self::new(vec![0.0; dim], Density::ExpL1, center_radius, shell_radius)
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn norm(&self) -> BallNorm {
        self.norm
    }

    pub fn center_radius(&self) -> f64 {
        self.center_radius
    }

    pub fn shell_radius(&self) -> f64 {
        self.shell_radius
    }

    pub fn density_at(&self, x: &[f64]) -> f64 {
        match &self.density {
            Density::ExpL1 => (-distance(BallNorm::L1, x, &self.center).unwrap_or(f64::INFINITY)).exp(),
            Density::Constant(v) => *v,
            Density::Custom(f) => f(x),
        }
    }

    /// Lebesgue volume of the ball of radius `r`.
    pub fn ball_volume(&self, r: f64) -> f64 {
        self.log_ball_volume(r).exp()
    }

    fn log_ball_volume(&self, r: f64) -> f64 {
        let n = self.dim() as f64;
        match self.norm {
            BallNorm::L1 => n * (2.0 * r).ln() - ln_gamma(n + 1.0),
            BallNorm::LInf => n * (2.0 * r).ln(),
        }
    }

    /// Closed-form `ln mu(A(r))`, when the density admits one.
    pub fn closed_form_log_measure(&self, r: f64) -> Option<f64> {
        if !(r > 0.0) {
            return Some(f64::NEG_INFINITY);
        }
        let n = self.dim() as f64;
        match (&self.density, self.norm) {
            // 2^n / (n-1)! * gamma_lower(n, r) = 2^n P(n, r)
            (Density::ExpL1, BallNorm::L1) => Some(n * std::f64::consts::LN_2 + gamma_cdf(n, r).ln()),
            (Density::ExpL1, BallNorm::LInf) => Some(n * (2.0 * -(-r).exp_m1()).ln()),
            (Density::Constant(v), _) => Some(v.ln() + self.log_ball_volume(r)),
            (Density::Custom(_), _) => None,
        }
    }

    /// Mass of the density outside the shell, relative to its total, when known.
    pub fn truncation_error(&self) -> Option<f64> {
        let n = self.dim() as f64;
        let r = self.shell_radius;
        match (&self.density, self.norm) {
            (Density::ExpL1, BallNorm::L1) => Some(gamma_ur(n, r)),
            (Density::ExpL1, BallNorm::LInf) => Some(1.0 - (-(-r).exp_m1()).powf(n)),
            _ => None,
        }
    }

    fn random_signs<R: Rng + ?Sized>(&self, magnitudes: &mut [f64], rng: &mut R) {
        for (m, c) in magnitudes.iter_mut().zip(&self.center) {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            *m = c + sign * *m;
        }
    }

    /// Uniform direction on the unit L1 sphere, as nonnegative magnitudes summing to 1.
    fn l1_direction<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut e: Vec<f64> = (0..self.dim())
            .map(|_| -rng.sample::<f64, _>(Open01).ln())
            .collect();
        let total: f64 = e.iter().sum();
        e.iter_mut().for_each(|x| *x /= total);
        e
    }
}

/// Inverts the Gamma(n, 1) law truncated to `[0, upper]` at probability `u`.
fn truncated_gamma_inverse(n: usize, upper: f64, u: f64) -> f64 {
    if n == 1 {
        return -(-u * -(-upper).exp_m1()).ln_1p();
    }
    let shape = n as f64;
    let target = u * gamma_cdf(shape, upper);
    let (mut lo, mut hi) = (0.0, upper);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if gamma_cdf(shape, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// `|X|` for the Laplace law truncated to `[-upper, upper]`.
fn truncated_exp_inverse(upper: f64, u: f64) -> f64 {
    -(-u * -(-upper).exp_m1()).ln_1p()
}

/// Draws from the family's density restricted to the ball of radius `beta`.
pub fn sample_restricted<R: Rng + ?Sized>(beta: f64, family: &L1BallFamily, rng: &mut R) -> Result<Vec<f64>> {
    if !(beta > 0.0) {
        return Err(invalid(format!("radius must be positive, got {beta}")));
    }
    let n = family.dim();
    let mut mags = match (&family.density, family.norm) {
        (Density::ExpL1, BallNorm::L1) => {
            let u: f64 = rng.sample(Open01);
            let r = truncated_gamma_inverse(n, beta, u);
            let mut dir = family.l1_direction(rng);
            dir.iter_mut().for_each(|d| *d *= r);
            dir
        }
        (Density::ExpL1, BallNorm::LInf) => (0..n)
            .map(|_| truncated_exp_inverse(beta, rng.sample(Open01)))
            .collect(),
        (Density::Constant(_), BallNorm::L1) => {
            let u: f64 = rng.sample(Open01);
            let r = beta * u.powf(1.0 / n as f64);
            let mut dir = family.l1_direction(rng);
            dir.iter_mut().for_each(|d| *d *= r);
            dir
        }
        (Density::Constant(_), BallNorm::LInf) => (0..n)
            .map(|_| beta * rng.sample::<f64, _>(Open01))
            .collect(),
        (Density::Custom(_), _) => {
            return Err(TpaError::Unsupported(
                "no restricted sampler is registered for a custom density".into(),
            ))
        }
    };
    family.random_signs(&mut mags, rng);
    Ok(mags)
}

/// Uniform draw from the ball of radius `r`.
fn sample_uniform<R: Rng + ?Sized>(family: &L1BallFamily, r: f64, rng: &mut R) -> Vec<f64> {
    let n = family.dim();
    let mut mags = match family.norm {
        BallNorm::L1 => {
            let u: f64 = rng.sample(Open01);
            let radius = r * u.powf(1.0 / n as f64);
            let mut dir = family.l1_direction(rng);
            dir.iter_mut().for_each(|d| *d *= radius);
            dir
        }
        BallNorm::LInf => (0..n).map(|_| r * rng.sample::<f64, _>(Open01)).collect(),
    };
    family.random_signs(&mut mags, rng);
    mags
}

impl NestedFamily for L1BallFamily {
    type Point = Vec<f64>;

    fn beta_shell(&self) -> f64 {
        self.shell_radius
    }

    fn beta_center(&self) -> f64 {
        self.center_radius
    }

    fn sample_within<R: Rng + ?Sized>(&self, beta: f64, rng: &mut R) -> Result<Draw<Vec<f64>>> {
        let point = sample_restricted(beta, self, rng)?;
        let b = distance(self.norm, &point, &self.center)?;
        Ok(Draw { point, beta: b })
    }

    fn log_measure(&self, beta: f64) -> Option<f64> {
        self.closed_form_log_measure(beta)
    }

    fn ratio_at_least_e(&self) -> bool {
        match (
            self.closed_form_log_measure(self.shell_radius),
            self.closed_form_log_measure(self.center_radius),
        ) {
            (Some(s), Some(c)) => s - c >= 1.0,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CenterEstimate {
    /// `Vol(ball) * mean f(X_i)` with `X_i` uniform on the center ball.
    pub value: f64,
    pub samples: u64,
    /// Plug-in value of the bound `Z(eps) / sqrt(N)` on the standard deviation.
    pub std_error_bound: f64,
    /// Envelope constant `M`, taken as the density at the center point.
    pub envelope: f64,
    /// Draws where `f` left `[M/2, M]`; nonzero means the bound above is not guaranteed.
    pub envelope_violations: u64,
}

/// Mean-value estimate of `Z(eps)`, the mass of the center ball. Uses stream phase [`phase::CENTER`].
pub fn center_estimate(family: &L1BallFamily, samples: u64, streams: &RngStreams) -> Result<CenterEstimate> {
    if samples == 0 {
        return Err(invalid("center estimate needs at least one sample"));
    }
    let mut rng = streams.stream(phase::CENTER, 0);
    let eps = family.center_radius;
    let envelope = family.density_at(&family.center);
    let mut sum = 0.0;
    let mut violations = 0u64;
    for _ in 0..samples {
        let x = sample_uniform(family, eps, &mut rng);
        let f = family.density_at(&x);
        if f > envelope || f < 0.5 * envelope {
            violations += 1;
        }
        sum += f;
    }
    let value = family.ball_volume(eps) * sum / samples as f64;
    Ok(CenterEstimate {
        value,
        samples,
        std_error_bound: value / (samples as f64).sqrt(),
        envelope,
        envelope_violations: violations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvidenceEstimate {
    /// `exp(N/k) * Z_hat(eps)`.
    pub evidence: f64,
    pub log_ratio: LogRatioEstimate,
    pub ratio: f64,
    pub center: CenterEstimate,
    pub truncation_error: Option<f64>,
}

/// Combines `k_runs` runs from the shell to the center ball with a center-mass estimate.
pub fn evidence_estimate(
    family: &L1BallFamily,
    k_runs: u64,
    center_samples: u64,
    streams: &RngStreams,
    cap: usize,
) -> Result<EvidenceEstimate> {
    let traces = run_batch(family, streams, phase::RUNS, k_runs, cap)?;
    let log_ratio = pool_runs(&traces, family)?.log_ratio_estimate();
    let center = center_estimate(family, center_samples, streams)?;
    let ratio = log_ratio.ratio();
    Ok(EvidenceEstimate {
        evidence: ratio * center.value,
        log_ratio,
        ratio,
        center,
        truncation_error: family.truncation_error(),
    })
}
