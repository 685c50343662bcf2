//! Nested families of sets and the conditional-sampling capability the engine consumes.

use rand::distr::Open01;
use rand::Rng;

use crate::error::{invalid, Result};

/// One conditional draw: a point of `A(beta)` and the smallest parameter whose set contains it.
#[derive(Debug, Clone, PartialEq)]
pub struct Draw<P> {
    pub point: P,
    pub beta: f64,
}

/// A monotone family `{A(beta)}` with a shell `A(beta_shell)` and a center `A(beta_center)`.
///
/// Implementations must be shareable read-only across threads; every call to
/// [`NestedFamily::sample_within`] with an independent generator must be an
/// independent draw from the measure restricted to `A(beta)`.
pub trait NestedFamily: Sync {
    type Point: Send;

    fn beta_shell(&self) -> f64;

    fn beta_center(&self) -> f64;

    /// Draws a point from the measure conditioned on `A(beta)` and returns it
    /// together with `inf { b : point in A(b) }`.
    fn sample_within<R: Rng + ?Sized>(&self, beta: f64, rng: &mut R) -> Result<Draw<Self::Point>>;

    /// `ln mu(A(beta))` when known in closed form. Only analytic test families provide it.
    fn log_measure(&self, _beta: f64) -> Option<f64> {
        None
    }

    /// Metadata flag: the caller asserts `mu(shell) / mu(center) >= e`.
    ///
    /// The two-phase approximation scheme relies on this; it is never checked at runtime.
    fn ratio_at_least_e(&self) -> bool {
        false
    }
}

pub(crate) fn check_endpoints(shell: f64, center: f64) -> Result<()> {
    if !shell.is_finite() || !center.is_finite() {
        return Err(invalid(format!("non-finite endpoints: shell {shell}, center {center}")));
    }
    if center > shell {
        return Err(invalid(format!("center {center} lies above shell {shell}")));
    }
    Ok(())
}

/// `A(beta) = [0, e^beta]` under Lebesgue measure.
///
/// `ln mu(A(beta)) = beta`, so the log ratio between shell and center is
/// `beta_shell - beta_center` and every statistical property of the engine
/// can be checked against closed forms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpInterval {
    shell: f64,
    center: f64,
}

impl ExpInterval {
    pub fn new(beta_shell: f64, beta_center: f64) -> Result<Self> {
        check_endpoints(beta_shell, beta_center)?;
        Ok(Self { shell: beta_shell, center: beta_center })
    }

    /// Shell at 0 and center at `-lambda`, so the true log ratio is `lambda`.
    pub fn with_log_ratio(lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0) {
            return Err(invalid(format!("log ratio must be nonnegative, got {lambda}")));
        }
        Self::new(0.0, -lambda)
    }

    pub fn log_ratio(&self) -> f64 {
        self.shell - self.center
    }
}

impl NestedFamily for ExpInterval {
    /// Natural log of the sampled position in `[0, e^beta]`.
    type Point = f64;

    fn beta_shell(&self) -> f64 {
        self.shell
    }

    fn beta_center(&self) -> f64 {
        self.center
    }

    fn sample_within<R: Rng + ?Sized>(&self, beta: f64, rng: &mut R) -> Result<Draw<f64>> {
        let u: f64 = rng.sample(Open01);
        let log_y = beta + u.ln();
        Ok(Draw { point: log_y, beta: log_y })
    }

    fn log_measure(&self, beta: f64) -> Option<f64> {
        Some(beta)
    }

    fn ratio_at_least_e(&self) -> bool {
        self.log_ratio() >= 1.0
    }
}
