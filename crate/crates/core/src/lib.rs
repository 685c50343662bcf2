//! Randomized approximation of measure ratios for nested families of sets.
//!
//! A run starts at the outer set, repeatedly draws a point from the current
//! set and shrinks to the smallest set still containing it, stopping once it
//! lands in the inner set. The number of steps is Poisson with mean
//! `ln(mu(outer) / mu(inner))`, which gives estimators with exact tail
//! behavior, cooling schedules and whole-curve estimates of partition
//! functions.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod diagnostics;
pub mod error;
pub mod family;
pub mod models;
pub mod omnithermal;
pub mod rng;
pub mod schedule;
pub mod stats;
pub mod tpa;

pub use error::{Result, TpaError};
pub use family::{Draw, ExpInterval, NestedFamily};
pub use rng::RngStreams;
pub use tpa::{
    estimate_log_ratio, exact_poisson_ci, normal_ci, pool_runs, pool_traces, run_batch, single_run,
    ConfidenceInterval, LogRatioEstimate, PooledProcess, RunTrace,
};
