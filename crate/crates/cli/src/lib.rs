//! Experiment driver for the `tpa` library.
//!
//! Every subcommand reads an optional TOML file, overlays command-line flags,
//! runs its experiment from a single master seed and writes versioned JSON and
//! CSV artifacts. Artifacts depend only on the settings and the seed, never on
//! the worker count.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod family;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;
use tpa::bounds::{run_ras, RasConfig};
use tpa::diagnostics::{count_chi_square, increment_battery, log_measure_offsets, spacing_diagnostic, IncrementReport, KsReport};
use tpa::models::gibbs::{brute_force_log_z, ENUMERATION_CAP};
use tpa::models::posterior::evidence_estimate;
use tpa::omnithermal::{
    anchored_partition_curve, counting_process, evidence_integral, evidence_integral_with, plan_runs,
    sup_deviation, write_curve_csv, write_partition_curve_csv, OmniPlan, Prior, StepFunction,
};
use tpa::rng::phase;
use tpa::schedule::{build_schedule, schedule_quality, write_schedule_csv, CoolingSchedule, ScheduleQuality};
use tpa::stats::ChiSquareReport;
use tpa::tpa::{write_pool_json, write_traces_jsonl, DEFAULT_ITERATION_CAP};
use tpa::{
    exact_poisson_ci, normal_ci, pool_runs, run_batch, ConfidenceInterval, LogRatioEstimate, NestedFamily,
    PooledProcess, RngStreams, RunTrace, TpaError,
};

use crate::config::{Mode, Settings};
use crate::family::{with_family, Family, FamilySummary};

pub const ESTIMATE_SCHEMA: &str = "tpa.estimate.v1";
pub const RAS_SCHEMA: &str = "tpa.ras.v1";
pub const SCHEDULE_REPORT_SCHEMA: &str = "tpa.schedule-report.v1";
pub const OMNI_SCHEMA: &str = "tpa.omni.v1";
pub const EVIDENCE_SCHEMA: &str = "tpa.evidence.v1";
pub const DIAGNOSE_SCHEMA: &str = "tpa.diagnose.v1";

const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] TpaError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot start worker pool: {0}")]
    Workers(String),
}

impl CliError {
    /// 2 for configuration and domain errors, 3 when a sampler broke its contract, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) if e.is_sampler_contract() => 3,
            CliError::Core(TpaError::Io(_) | TpaError::Json(_)) => 1,
            CliError::Core(_) => 2,
            CliError::Io(_) | CliError::Workers(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "tpa", version, about = "Estimate measure ratios of nested set families")]
pub struct Cli {
    /// TOML file with default settings; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// k runs: traces, pooled process, point estimate and intervals.
    Run(Settings),
    /// Two-phase (epsilon, delta) approximation.
    Ras(Settings),
    /// Cooling schedule from the order statistics of k pooled runs.
    Schedule(Settings),
    /// Whole-curve estimate, optionally sized by the run planner.
    Omni(Settings),
    /// Evidence for the l1ball model or an Ising curve.
    Evidence(Settings),
    /// Statistical test battery against the family's exact oracle.
    Diagnose(Settings),
}

impl Command {
    fn split(self) -> (Mode, Settings) {
        match self {
            Command::Run(s) => (Mode::Run, s),
            Command::Ras(s) => (Mode::Ras, s),
            Command::Schedule(s) => (Mode::Schedule, s),
            Command::Omni(s) => (Mode::Omni, s),
            Command::Evidence(s) => (Mode::Evidence, s),
            Command::Diagnose(s) => (Mode::Diagnose, s),
        }
    }
}

/// What a subcommand produced.
#[derive(Debug, Serialize)]
pub struct Outcome {
    pub mode: Mode,
    pub files: Vec<PathBuf>,
    pub summary: serde_json::Value,
}

/// Parses arguments, runs the subcommand and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(outcome) => {
            println!("{}", serde_json::to_string_pretty(&outcome.summary).unwrap_or_default());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> Result<Outcome, CliError> {
    let (mode, flags) = cli.command.split();
    let settings = match &cli.config {
        Some(path) => flags.over(Settings::from_file(path)?),
        None => flags,
    };
    if let Some(declared) = settings.mode {
        if declared != mode {
            return Err(CliError::Config(format!(
                "config declares mode {declared:?} but the {mode:?} subcommand was given"
            )));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(settings.workers.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Workers(e.to_string()))?;
    pool.install(|| match mode {
        Mode::Run => cmd_run(&settings),
        Mode::Ras => cmd_ras(&settings),
        Mode::Schedule => cmd_schedule(&settings),
        Mode::Omni => cmd_omni(&settings),
        Mode::Evidence => cmd_evidence(&settings),
        Mode::Diagnose => cmd_diagnose(&settings),
    })
}

struct Artifacts {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Artifacts {
    fn new(settings: &Settings) -> Result<Self, CliError> {
        let dir = settings.output_dir();
        std::fs::create_dir_all(&dir)?;
        Ok(Self { dir, files: Vec::new() })
    }

    fn write<F>(&mut self, name: &str, body: F) -> Result<(), CliError>
    where
        F: FnOnce(&mut BufWriter<File>) -> Result<(), CliError>,
    {
        let path = self.dir.join(name);
        let mut out = BufWriter::new(File::create(&path)?);
        body(&mut out)?;
        out.flush()?;
        self.files.push(path);
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        self.write(name, |out| {
            serde_json::to_writer_pretty(&mut *out, value).map_err(TpaError::from)?;
            out.write_all(b"\n")?;
            Ok(())
        })
    }

    fn finish<T: Serialize>(self, mode: Mode, summary: &T) -> Result<Outcome, CliError> {
        let summary = serde_json::to_value(summary).map_err(TpaError::from)?;
        Ok(Outcome { mode, files: self.files, summary })
    }
}

fn require_k(settings: &Settings, mode: &str) -> Result<u64, CliError> {
    let k = Settings::require(settings.k, "k", mode)?;
    if k == 0 {
        return Err(CliError::Config("`k` must be at least 1".into()));
    }
    Ok(k)
}

fn collect_runs(family: &Family, streams: &RngStreams, k: u64, cap: usize) -> Result<(Vec<RunTrace>, PooledProcess), CliError> {
    with_family!(family, f => {
        let traces = run_batch(f, streams, phase::RUNS, k, cap)?;
        let pool = pool_runs(&traces, f)?;
        Ok((traces, pool))
    })
}

/// Both intervals; the normal one is absent when `N = 0`.
#[derive(Debug, Clone, Serialize)]
pub struct Intervals {
    pub normal: Option<ConfidenceInterval>,
    pub exact: ConfidenceInterval,
}

fn intervals(pool: &PooledProcess, alpha: f64) -> Result<Intervals, CliError> {
    let normal = match normal_ci(pool, alpha) {
        Ok(ci) => Some(ci),
        Err(TpaError::DegenerateInterval) => None,
        Err(e) => return Err(e.into()),
    };
    Ok(Intervals { normal, exact: exact_poisson_ci(pool, alpha)? })
}

fn write_curves(artifacts: &mut Artifacts, curve: &StepFunction, log_anchor: Option<f64>) -> Result<(), CliError> {
    artifacts.write("curve.csv", |out| Ok(write_curve_csv(out, curve)?))?;
    if let Some(anchor) = log_anchor {
        let mut anchored = curve.clone();
        anchored.log_anchor = Some(anchor);
        artifacts.write("partition_curve.csv", |out| Ok(write_partition_curve_csv(out, &anchored)?))?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct RunReport {
    pub schema: &'static str,
    pub seed: u64,
    pub family: FamilySummary,
    pub k: u64,
    pub estimate: LogRatioEstimate,
    pub ratio: f64,
    pub alpha: f64,
    pub intervals: Intervals,
    pub total_draws: u64,
}

pub fn cmd_run(settings: &Settings) -> Result<Outcome, CliError> {
    let seed = settings.seed()?;
    let k = require_k(settings, "run")?;
    let alpha = settings.alpha.unwrap_or(DEFAULT_ALPHA);
    let family = Family::build(settings)?;
    let streams = RngStreams::new(seed);
    let (traces, pool) = collect_runs(&family, &streams, k, settings.cap.unwrap_or(DEFAULT_ITERATION_CAP))?;
    let estimate = pool.log_ratio_estimate();
    let report = RunReport {
        schema: ESTIMATE_SCHEMA,
        seed,
        family: family.summary(),
        k,
        ratio: estimate.ratio(),
        estimate,
        alpha,
        intervals: intervals(&pool, alpha)?,
        total_draws: traces.iter().map(RunTrace::draws).sum(),
    };
    let mut artifacts = Artifacts::new(settings)?;
    artifacts.write("traces.jsonl", |out| Ok(write_traces_jsonl(out, &traces)?))?;
    artifacts.write("pool.json", |out| Ok(write_pool_json(out, &pool)?))?;
    artifacts.json("estimate.json", &report)?;
    write_curves(&mut artifacts, &counting_process(&pool), family.log_center_measure())?;
    artifacts.finish(Mode::Run, &report)
}

#[derive(Debug, Serialize)]
pub struct RasReport {
    pub schema: &'static str,
    pub seed: u64,
    pub family: FamilySummary,
    pub epsilon: f64,
    pub delta: f64,
    pub k1: u64,
    pub n1: u64,
    pub k2: u64,
    pub n2: u64,
    pub estimate: f64,
    pub total_samples: u64,
    pub total_draws: u64,
    pub precondition_asserted: bool,
    pub alpha: f64,
    /// Intervals for the log ratio from the phase II pool.
    pub intervals: Intervals,
}

pub fn cmd_ras(settings: &Settings) -> Result<Outcome, CliError> {
    let seed = settings.seed()?;
    let epsilon = Settings::require(settings.epsilon, "epsilon", "ras")?;
    let delta = Settings::require(settings.delta, "delta", "ras")?;
    let alpha = settings.alpha.unwrap_or(DEFAULT_ALPHA);
    let config = RasConfig::new(epsilon, delta)?;
    let family = Family::build(settings)?;
    let streams = RngStreams::new(seed);
    let cap = settings.cap.unwrap_or(DEFAULT_ITERATION_CAP);
    let result = with_family!(&family, f => run_ras(f, &config, &streams, cap))?;
    let pool = result
        .phase_two_pool
        .as_ref()
        .ok_or(CliError::Core(TpaError::EmptyPhaseOne { k1: result.k1 }))?;
    let report = RasReport {
        schema: RAS_SCHEMA,
        seed,
        family: family.summary(),
        epsilon,
        delta,
        k1: result.k1,
        n1: result.n1,
        k2: result.k2,
        n2: result.n2,
        estimate: result.estimate,
        total_samples: result.total_samples,
        total_draws: result.total_draws,
        precondition_asserted: result.precondition_asserted,
        alpha,
        intervals: intervals(pool, alpha)?,
    };
    let mut artifacts = Artifacts::new(settings)?;
    artifacts.json("ras.json", &report)?;
    artifacts.finish(Mode::Ras, &report)
}

#[derive(Debug, Serialize)]
pub struct ScheduleReport {
    pub schema: &'static str,
    pub seed: u64,
    pub family: FamilySummary,
    pub k: u64,
    pub n: u64,
    pub schedule: CoolingSchedule,
    /// Present when the family has an exact log-measure.
    pub quality: Option<ScheduleQuality>,
}

pub fn cmd_schedule(settings: &Settings) -> Result<Outcome, CliError> {
    let seed = settings.seed()?;
    let k = require_k(settings, "schedule")?;
    let family = Family::build(settings)?;
    let streams = RngStreams::new(seed);
    let (_, pool) = collect_runs(&family, &streams, k, settings.cap.unwrap_or(DEFAULT_ITERATION_CAP))?;
    let schedule = build_schedule(&pool, k)?;
    let quality = match with_family!(&family, f => schedule_quality(&schedule, f)) {
        Ok(q) => Some(q),
        Err(TpaError::Unsupported(_)) => None,
        Err(e) => return Err(e.into()),
    };
    let report = ScheduleReport {
        schema: SCHEDULE_REPORT_SCHEMA,
        seed,
        family: family.summary(),
        k,
        n: pool.n(),
        schedule,
        quality,
    };
    let mut artifacts = Artifacts::new(settings)?;
    artifacts.write("schedule.csv", |out| Ok(write_schedule_csv(out, &report.schedule)?))?;
    artifacts.json("schedule.json", &report)?;
    artifacts.finish(Mode::Schedule, &report)
}

#[derive(Debug, Serialize)]
pub struct OmniReport {
    pub schema: &'static str,
    pub seed: u64,
    pub family: FamilySummary,
    pub plan: Option<OmniPlan>,
    pub k: u64,
    pub n: u64,
    pub estimate: LogRatioEstimate,
    pub breakpoints: usize,
    /// `sup_t |N_P(t)/k - t|` against the exact oracle.
    pub sup_deviation: Option<f64>,
}

fn plan_from(settings: &Settings, family: &Family) -> Result<Option<OmniPlan>, CliError> {
    let Some(epsilon) = settings.epsilon else {
        return Ok(None);
    };
    let delta = Settings::require(settings.delta, "delta", "omni planning")?;
    let lambda_upper = settings
        .lambda_upper
        .or_else(|| family.oracle_log_ratio())
        .ok_or_else(|| CliError::Config("omni planning requires `lambda_upper`".into()))?;
    Ok(Some(plan_runs(epsilon, delta, lambda_upper)?))
}

pub fn cmd_omni(settings: &Settings) -> Result<Outcome, CliError> {
    let seed = settings.seed()?;
    let family = Family::build(settings)?;
    let plan = plan_from(settings, &family)?;
    let k = match (settings.k, plan) {
        (Some(_), _) => require_k(settings, "omni")?,
        (None, Some(p)) => p.k_required,
        (None, None) => return Err(CliError::Config("omni mode requires `k` or `epsilon` and `delta`".into())),
    };
    let streams = RngStreams::new(seed);
    let (_, pool) = collect_runs(&family, &streams, k, settings.cap.unwrap_or(DEFAULT_ITERATION_CAP))?;
    let curve = counting_process(&pool);
    let sup = match family.oracle_log_ratio() {
        Some(lambda) => {
            let jumps = with_family!(&family, f => log_measure_offsets(&pool, f))?;
            Some(sup_deviation(&jumps, k, lambda))
        }
        None => None,
    };
    let report = OmniReport {
        schema: OMNI_SCHEMA,
        seed,
        family: family.summary(),
        plan,
        k,
        n: pool.n(),
        estimate: pool.log_ratio_estimate(),
        breakpoints: curve.breakpoints.len(),
        sup_deviation: sup,
    };
    let mut artifacts = Artifacts::new(settings)?;
    write_curves(&mut artifacts, &curve, family.log_center_measure())?;
    artifacts.json("omni.json", &report)?;
    artifacts.finish(Mode::Omni, &report)
}

#[derive(Debug, Serialize)]
pub struct EvidenceReport {
    pub schema: &'static str,
    pub seed: u64,
    pub family: FamilySummary,
    pub k: u64,
    pub evidence: f64,
    /// TPA factor `exp(N/k)` (l1ball).
    pub ratio: Option<f64>,
    /// Center-mass estimate (l1ball).
    pub center_mass: Option<f64>,
    pub center_std_error_bound: Option<f64>,
    pub truncation_error: Option<f64>,
    /// Observed energy and prior range (ising).
    pub observed_h: Option<f64>,
    pub b_max: Option<f64>,
    /// Same integral with the exact partition function, when enumeration is feasible.
    pub oracle_evidence: Option<f64>,
}

pub fn cmd_evidence(settings: &Settings) -> Result<Outcome, CliError> {
    let seed = settings.seed()?;
    let k = require_k(settings, "evidence")?;
    let family = Family::build(settings)?;
    let streams = RngStreams::new(seed);
    let cap = settings.cap.unwrap_or(DEFAULT_ITERATION_CAP);
    let mut artifacts = Artifacts::new(settings)?;
    let report = match &family {
        Family::Ball(ball) => {
            let samples = settings.center_samples.unwrap_or(10_000);
            let est = evidence_estimate(ball, k, samples, &streams, cap)?;
            EvidenceReport {
                schema: EVIDENCE_SCHEMA,
                seed,
                family: family.summary(),
                k,
                evidence: est.evidence,
                ratio: Some(est.ratio),
                center_mass: Some(est.center.value),
                center_std_error_bound: Some(est.center.std_error_bound),
                truncation_error: est.truncation_error,
                observed_h: None,
                b_max: None,
                oracle_evidence: ball.log_measure(ball.shell_radius()).map(f64::exp),
            }
        }
        Family::Ising(ising) => {
            let (_, pool) = collect_runs(&family, &streams, k, cap)?;
            let curve = anchored_partition_curve(&pool, ising.log_center_measure())?;
            let b_max = settings.b_max.unwrap_or(ising.beta_shell());
            let step = settings.step.unwrap_or(1e-3);
            // Default observation: every edge agrees, the ground state.
            let h = settings
                .observed_h
                .unwrap_or(-(1.0 + ising.graph().edges().len() as f64));
            let prior = Prior::Uniform { lower: 0.0, upper: b_max };
            let value = evidence_integral(&curve, &prior, h, b_max, step)?.value;
            let graph = ising.graph();
            let oracle = if graph.vertex_count() <= ENUMERATION_CAP {
                Some(evidence_integral_with(|b| brute_force_log_z(b, graph), &prior, h, b_max, step)?.value)
            } else {
                None
            };
            artifacts.write("partition_curve.csv", |out| Ok(write_partition_curve_csv(out, &curve)?))?;
            EvidenceReport {
                schema: EVIDENCE_SCHEMA,
                seed,
                family: family.summary(),
                k,
                evidence: value,
                ratio: None,
                center_mass: None,
                center_std_error_bound: None,
                truncation_error: None,
                observed_h: Some(h),
                b_max: Some(b_max),
                oracle_evidence: oracle,
            }
        }
        Family::Exp(_) => {
            return Err(CliError::Config("evidence mode needs the ising or l1ball family".into()));
        }
    };
    artifacts.json("evidence.json", &report)?;
    artifacts.finish(Mode::Evidence, &report)
}

#[derive(Debug, Serialize)]
pub struct DiagnoseReport {
    pub schema: &'static str,
    pub seed: u64,
    pub family: FamilySummary,
    pub k: u64,
    pub pools: u64,
    pub significance: f64,
    pub count_chi_square: ChiSquareReport,
    pub count_passed: bool,
    pub spacings: KsReport,
    pub increments: IncrementReport,
    pub passed: bool,
}

pub fn cmd_diagnose(settings: &Settings) -> Result<Outcome, CliError> {
    let seed = settings.seed()?;
    let k = require_k(settings, "diagnose")?;
    let pools_wanted = settings.pools.unwrap_or(20).max(1);
    let significance = settings.significance.unwrap_or(0.001);
    let family = Family::build(settings)?;
    let lambda = family
        .oracle_log_ratio()
        .ok_or_else(|| CliError::Config("diagnose needs a family with an exact oracle".into()))?;
    let width = settings.window.unwrap_or(lambda.min(1.0));
    let master = RngStreams::new(seed);
    let cap = settings.cap.unwrap_or(DEFAULT_ITERATION_CAP);
    let mut all_traces = Vec::new();
    let mut pools = Vec::new();
    for p in 0..pools_wanted {
        let (traces, pool) = collect_runs(&family, &master.fork(p), k, cap)?;
        all_traces.extend(traces);
        pools.push(pool);
    }
    let counts = count_chi_square(&all_traces, lambda);
    let count_passed = counts.passes(significance);
    let merged = merged_pool(&pools)?;
    let spacings = with_family!(&family, f => spacing_diagnostic(&merged, f, significance))?;
    let increments = with_family!(&family, f => increment_battery(&pools, f, width, significance))?;
    let report = DiagnoseReport {
        schema: DIAGNOSE_SCHEMA,
        seed,
        family: family.summary(),
        k,
        pools: pools_wanted,
        significance,
        passed: count_passed && spacings.passed && increments.passed,
        count_chi_square: counts,
        count_passed,
        spacings,
        increments,
    };
    let mut artifacts = Artifacts::new(settings)?;
    artifacts.json("diagnose.json", &report)?;
    artifacts.finish(Mode::Diagnose, &report)
}

/// Superposition of independent pools: one pool of all their runs.
fn merged_pool(pools: &[PooledProcess]) -> Result<PooledProcess, CliError> {
    let first = &pools[0];
    let k = pools.iter().map(|p| p.k).sum();
    let points = pools.iter().flat_map(|p| p.points.iter().copied()).collect();
    Ok(PooledProcess::new(k, first.beta_shell, first.beta_center, points)?)
}
