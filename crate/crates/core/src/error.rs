use thiserror::Error;

/// Errors produced by the estimation engine and its model plug-ins.
#[derive(Debug, Error)]
pub enum TpaError {
    /// A sampler returned a parameter that did not shrink the current set.
    #[error("sampler did not shrink the nested set: beta {current} -> {next}")]
    CorruptSampler { current: f64, next: f64 },

    /// A single run exceeded its step budget.
    #[error("run exceeded the iteration cap of {cap} steps without reaching the center")]
    Runaway { cap: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A parameter lies outside the range where a bound or formula is valid.
    #[error("domain error: {0}")]
    Domain(String),

    /// The normal interval is meaningless when no points were observed.
    #[error("normal interval is degenerate at N = 0; use the exact Poisson interval instead")]
    DegenerateInterval,

    #[error("unsupported: {0}")]
    Unsupported(String),

    /// Phase I of the two-phase scheme observed no points, so Phase II has zero runs.
    #[error("phase I pooled zero points over {k1} runs; phase II would be empty")]
    EmptyPhaseOne { k1: u64 },

    /// Acceptance-rejection never hit the center: the ratio estimate is infinite.
    #[error("no draws landed in the center after {samples} samples (infinite ratio estimate)")]
    NoCenterHits { samples: u64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl TpaError {
    /// True for errors that indicate the sampler broke its contract.
    pub fn is_sampler_contract(&self) -> bool {
        matches!(self, TpaError::CorruptSampler { .. } | TpaError::Runaway { .. })
    }
}

pub type Result<T> = std::result::Result<T, TpaError>;

pub(crate) fn invalid(msg: impl Into<String>) -> TpaError {
    TpaError::InvalidArgument(msg.into())
}

pub(crate) fn domain(msg: impl Into<String>) -> TpaError {
    TpaError::Domain(msg.into())
}
