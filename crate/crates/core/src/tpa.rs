//! The shrink-until-center engine, run pooling, and log-ratio estimates.
//!
//! One run starts at `beta_shell`, repeatedly draws a point from the current
//! set and moves to the smallest set containing it, and stops once a draw
//! lands in the center. The number of steps taken before that is Poisson with
//! mean `ln(mu(shell) / mu(center))`; the union of `k` runs is a rate-`k`
//! Poisson process on the log-measure axis.

use std::io::{BufRead, Write};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, TpaError};
use crate::family::{check_endpoints, NestedFamily};
use crate::rng::RngStreams;
use crate::stats::{gamma_quantile, normal_quantile};

/// Default per-run step budget.
pub const DEFAULT_ITERATION_CAP: usize = 1_000_000;

pub const TRACE_SCHEMA: &str = "tpa.trace.v1";
pub const POOL_SCHEMA: &str = "tpa.pool.v1";

/// The parameter sequence visited by one run.
///
/// `betas[0]` is the shell; the final entry is the draw that landed in the
/// center. `count` is the number of intermediate parameters strictly above
/// the center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub run_index: u64,
    pub betas: Vec<f64>,
    pub count: u64,
}

impl RunTrace {
    /// Parameters strictly between center and shell, i.e. everything but the start and the terminal draw.
    pub fn interior(&self) -> &[f64] {
        match self.betas.len() {
            0..=2 => &[],
            n => &self.betas[1..n - 1],
        }
    }

    /// Number of conditional draws the run consumed (`count + 1`).
    pub fn draws(&self) -> u64 {
        self.count + 1
    }
}

/// Executes one run with the default step budget.
pub fn single_run<F, R>(family: &F, rng: &mut R) -> Result<RunTrace>
where
    F: NestedFamily + ?Sized,
    R: Rng + ?Sized,
{
    single_run_with_cap(family, rng, DEFAULT_ITERATION_CAP)
}

pub fn single_run_with_cap<F, R>(family: &F, rng: &mut R, cap: usize) -> Result<RunTrace>
where
    F: NestedFamily + ?Sized,
    R: Rng + ?Sized,
{
    let shell = family.beta_shell();
    let center = family.beta_center();
    check_endpoints(shell, center)?;

    let mut betas = vec![shell];
    let mut current = shell;
    for count in 0..cap as u64 {
        let next = family.sample_within(current, rng)?.beta;
        if !(next < current) {
            return Err(TpaError::CorruptSampler { current, next });
        }
        betas.push(next);
        if next <= center {
            return Ok(RunTrace { run_index: 0, betas, count });
        }
        current = next;
    }
    Err(TpaError::Runaway { cap })
}

/// Runs `k` independent runs in parallel, run `j` on stream `(phase, j)`.
///
/// The result is ordered by run index and does not depend on the thread count.
pub fn run_batch<F>(
    family: &F,
    streams: &RngStreams,
    phase: u32,
    k: u64,
    cap: usize,
) -> Result<Vec<RunTrace>>
where
    F: NestedFamily + ?Sized,
{
    (0..k)
        .into_par_iter()
        .map(|j| {
            let mut rng = streams.stream(phase, j);
            let mut trace = single_run_with_cap(family, &mut rng, cap)?;
            trace.run_index = j;
            Ok(trace)
        })
        .collect()
}

/// The multiset of interior parameters collected from `k` runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledProcess {
    pub k: u64,
    pub beta_shell: f64,
    pub beta_center: f64,
    /// Sorted in descending order.
    pub points: Vec<f64>,
}

impl PooledProcess {
    pub fn new(k: u64, beta_shell: f64, beta_center: f64, mut points: Vec<f64>) -> Result<Self> {
        if k == 0 {
            return Err(invalid("a pool needs at least one run"));
        }
        check_endpoints(beta_shell, beta_center)?;
        if let Some(bad) = points.iter().find(|&&b| !(b > beta_center && b <= beta_shell)) {
            return Err(invalid(format!(
                "point {bad} outside ({beta_center}, {beta_shell}]"
            )));
        }
        points.sort_by(|a, b| b.total_cmp(a));
        Ok(Self { k, beta_shell, beta_center, points })
    }

    /// Total number of pooled points, `N`.
    pub fn n(&self) -> u64 {
        self.points.len() as u64
    }

    pub fn log_ratio_estimate(&self) -> LogRatioEstimate {
        estimate_log_ratio(self)
    }
}

/// Pools traces produced by the same family.
pub fn pool_runs<F>(traces: &[RunTrace], family: &F) -> Result<PooledProcess>
where
    F: NestedFamily + ?Sized,
{
    pool_traces(traces, family.beta_shell(), family.beta_center())
}

pub fn pool_traces(traces: &[RunTrace], beta_shell: f64, beta_center: f64) -> Result<PooledProcess> {
    if traces.is_empty() {
        return Err(invalid("cannot pool an empty list of traces"));
    }
    let points = traces.iter().flat_map(|t| t.interior().iter().copied()).collect();
    PooledProcess::new(traces.len() as u64, beta_shell, beta_center, points)
}

/// `N / k` as an estimate of `ln(mu(shell) / mu(center))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRatioEstimate {
    pub estimate: f64,
    pub k: u64,
    pub n: u64,
    /// `N / k^2`, the plug-in estimate of `Var(N / k) = lambda / k`.
    pub variance_estimate: f64,
}

impl LogRatioEstimate {
    pub fn ratio(&self) -> f64 {
        self.estimate.exp()
    }
}

pub fn estimate_log_ratio(pool: &PooledProcess) -> LogRatioEstimate {
    let k = pool.k as f64;
    let n = pool.n() as f64;
    LogRatioEstimate {
        estimate: n / k,
        k: pool.k,
        n: pool.n(),
        variance_estimate: n / (k * k),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalMethod {
    Normal,
    ExactPoisson,
}

/// A confidence interval for the log ratio together with its exponentiated form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub method: IntervalMethod,
    pub alpha: f64,
    pub log_lower: f64,
    pub log_upper: f64,
    pub lower: f64,
    pub upper: f64,
}

impl ConfidenceInterval {
    fn from_log(method: IntervalMethod, alpha: f64, log_lower: f64, log_upper: f64) -> Self {
        Self {
            method,
            alpha,
            log_lower,
            log_upper,
            lower: log_lower.exp(),
            upper: log_upper.exp(),
        }
    }

    pub fn contains_log(&self, value: f64) -> bool {
        self.log_lower <= value && value <= self.log_upper
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("alpha must lie in (0, 1], got {alpha}")))
    }
}

/// Normal-approximation interval `N/k ± z(1 - alpha/2) * sqrt(N) / k`.
pub fn normal_ci(pool: &PooledProcess, alpha: f64) -> Result<ConfidenceInterval> {
    check_alpha(alpha)?;
    if pool.n() == 0 {
        return Err(TpaError::DegenerateInterval);
    }
    let est = estimate_log_ratio(pool);
    let half = normal_quantile(1.0 - alpha / 2.0) * est.variance_estimate.sqrt();
    Ok(ConfidenceInterval::from_log(
        IntervalMethod::Normal,
        alpha,
        est.estimate - half,
        est.estimate + half,
    ))
}

/// Exact (Garwood) interval obtained by inverting the Poisson tails of `N`.
pub fn exact_poisson_ci(pool: &PooledProcess, alpha: f64) -> Result<ConfidenceInterval> {
    check_alpha(alpha)?;
    let n = pool.n() as f64;
    let k = pool.k as f64;
    let lower = if pool.n() == 0 { 0.0 } else { gamma_quantile(alpha / 2.0, n) / k };
    let upper = gamma_quantile(1.0 - alpha / 2.0, n + 1.0) / k;
    Ok(ConfidenceInterval::from_log(IntervalMethod::ExactPoisson, alpha, lower, upper))
}

#[derive(Serialize)]
struct TraceRecord<'a> {
    schema: &'a str,
    run_index: u64,
    betas: &'a [f64],
    count: u64,
}

/// Writes one JSON object per run, one per line.
pub fn write_traces_jsonl<W: Write>(mut out: W, traces: &[RunTrace]) -> Result<()> {
    for t in traces {
        let record = TraceRecord {
            schema: TRACE_SCHEMA,
            run_index: t.run_index,
            betas: &t.betas,
            count: t.count,
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_traces_jsonl<R: BufRead>(input: R) -> Result<Vec<RunTrace>> {
    let mut traces = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        traces.push(serde_json::from_str::<RunTrace>(&line)?);
    }
    Ok(traces)
}

#[derive(Serialize, Deserialize)]
struct PoolRecord {
    schema: String,
    #[serde(flatten)]
    pool: PooledProcess,
}

pub fn write_pool_json<W: Write>(out: W, pool: &PooledProcess) -> Result<()> {
    let record = PoolRecord { schema: POOL_SCHEMA.to_string(), pool: pool.clone() };
    serde_json::to_writer_pretty(out, &record)?;
    Ok(())
}

pub fn read_pool_json<R: std::io::Read>(input: R) -> Result<PooledProcess> {
    let record: PoolRecord = serde_json::from_reader(input)?;
    if record.schema != POOL_SCHEMA {
        return Err(invalid(format!("unexpected pool schema {}", record.schema)));
    }
    let p = record.pool;
    PooledProcess::new(p.k, p.beta_shell, p.beta_center, p.points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::family::{Draw, ExpInterval};

    fn trace(betas: Vec<f64>, count: u64) -> RunTrace {
        RunTrace { run_index: 0, betas, count }
    }

    struct Stuck;
    impl NestedFamily for Stuck {
        type Point = ();
        fn beta_shell(&self) -> f64 {
            1.0
        }
        fn beta_center(&self) -> f64 {
            0.0
        }
        fn sample_within<R: Rng + ?Sized>(&self, beta: f64, _: &mut R) -> Result<Draw<()>> {
            Ok(Draw { point: (), beta })
        }
    }

    struct Creep;
    impl NestedFamily for Creep {
        type Point = ();
        fn beta_shell(&self) -> f64 {
            1.0
        }
        fn beta_center(&self) -> f64 {
            0.0
        }
        fn sample_within<R: Rng + ?Sized>(&self, beta: f64, _: &mut R) -> Result<Draw<()>> {
            Ok(Draw { point: (), beta: beta - 1e-9 })
        }
    }

    #[test]
    fn center_equal_to_shell_gives_zero() {
        let fam = ExpInterval::new(0.0, 0.0).unwrap();
        let streams = RngStreams::new(3);
        for t in run_batch(&fam, &streams, 0, 200, DEFAULT_ITERATION_CAP).unwrap() {
            assert_eq!(t.count, 0);
            assert_eq!(t.betas.len(), 2);
        }
    }

    #[test]
    fn non_shrinking_sampler_is_rejected() {
        let mut rng = RngStreams::new(0).stream(0, 0);
        let err = single_run(&Stuck, &mut rng).unwrap_err();
        assert!(matches!(err, TpaError::CorruptSampler { .. }));
        assert!(err.is_sampler_contract());
    }

    #[test]
    fn iteration_cap_stops_runaway() {
        let mut rng = RngStreams::new(0).stream(0, 0);
        let err = single_run_with_cap(&Creep, &mut rng, 1000).unwrap_err();
        assert!(matches!(err, TpaError::Runaway { cap: 1000 }));
    }

    #[test]
    fn traces_satisfy_invariants() {
        let fam = ExpInterval::with_log_ratio(3.0).unwrap();
        let traces = run_batch(&fam, &RngStreams::new(11), 0, 500, DEFAULT_ITERATION_CAP).unwrap();
        for (j, t) in traces.iter().enumerate() {
            assert_eq!(t.run_index, j as u64);
            assert_eq!(t.betas[0], 0.0);
            assert!(t.betas.windows(2).all(|w| w[1] < w[0]));
            assert!(*t.betas.last().unwrap() <= -3.0);
            assert_eq!(t.count as usize, t.betas.len() - 2);
            assert!(t.interior().iter().all(|&b| b > -3.0));
        }
    }

    #[test]
    fn pooling_examples() {
        let one = pool_traces(&[trace(vec![1.0, 0.8, 0.5, 0.2, -0.1], 3)], 1.0, 0.0).unwrap();
        assert_eq!(one.n(), 3);
        let two = pool_traces(
            &[
                trace(vec![1.0, 0.9, 0.3, -0.5], 2),
                trace(vec![1.0, 0.95, 0.7, 0.6, 0.4, 0.1, -0.2], 5),
            ],
            1.0,
            0.0,
        )
        .unwrap();
        assert_eq!(two.n(), 7);
        assert_eq!(two.points, vec![0.95, 0.9, 0.7, 0.6, 0.4, 0.3, 0.1]);
        assert!(pool_traces(&[], 1.0, 0.0).is_err());
    }

    #[test]
    fn pooling_is_order_independent() {
        let fam = ExpInterval::with_log_ratio(2.0).unwrap();
        let mut traces = run_batch(&fam, &RngStreams::new(5), 0, 50, DEFAULT_ITERATION_CAP).unwrap();
        let a = pool_runs(&traces, &fam).unwrap();
        traces.reverse();
        let b = pool_runs(&traces, &fam).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n(), traces.iter().map(|t| t.count).sum::<u64>());
    }

    fn synthetic_pool(n: u64, k: u64) -> PooledProcess {
        let points = (0..n).map(|i| 1.0 - (i as f64 + 0.5) / n as f64).collect();
        PooledProcess::new(k, 1.0, 0.0, points).unwrap()
    }

    #[test]
    fn estimate_arithmetic() {
        let e = estimate_log_ratio(&synthetic_pool(0, 5));
        assert_eq!((e.estimate, e.variance_estimate), (0.0, 0.0));
        let e = estimate_log_ratio(&synthetic_pool(100, 25));
        assert_eq!(e.estimate, 4.0);
        assert!((e.variance_estimate - 0.16).abs() < 1e-15);
        assert!((e.variance_estimate - e.estimate / 25.0).abs() < 1e-15);
    }

    #[test]
    fn normal_interval_example() {
        let ci = normal_ci(&synthetic_pool(100, 25), 0.05).unwrap();
        assert!((ci.log_lower - 3.216_014_406_183_98).abs() < 1e-9);
        assert!((ci.log_upper - 4.783_985_593_816_02).abs() < 1e-9);
        assert!((ci.lower - ci.log_lower.exp()).abs() < 1e-12);
        let zero_width = normal_ci(&synthetic_pool(100, 25), 1.0).unwrap();
        assert_eq!(zero_width.log_lower, 4.0);
        assert_eq!(zero_width.log_upper, 4.0);
        assert!(matches!(normal_ci(&synthetic_pool(0, 3), 0.05), Err(TpaError::DegenerateInterval)));
        assert!(normal_ci(&synthetic_pool(3, 3), 0.0).is_err());
    }

    #[test]
    fn exact_interval_examples() {
        let ci = exact_poisson_ci(&synthetic_pool(0, 10), 0.05).unwrap();
        assert_eq!(ci.log_lower, 0.0);
        assert!((ci.log_upper - 0.368_887_945_411_393_6).abs() < 1e-10);
        for n in 1..200 {
            let pool = synthetic_pool(n, 7);
            let ci = exact_poisson_ci(&pool, 0.05).unwrap();
            assert!(ci.contains_log(n as f64 / 7.0), "n = {n}");
        }
    }

    #[test]
    fn json_round_trip() {
        let fam = ExpInterval::with_log_ratio(1.5).unwrap();
        let traces = run_batch(&fam, &RngStreams::new(9), 0, 20, DEFAULT_ITERATION_CAP).unwrap();
        let mut buf = Vec::new();
        write_traces_jsonl(&mut buf, &traces).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 20);
        assert!(text.lines().all(|l| l.contains("\"schema\":\"tpa.trace.v1\"")));
        assert_eq!(read_traces_jsonl(&buf[..]).unwrap(), traces);

        let pool = pool_runs(&traces, &fam).unwrap();
        let mut buf = Vec::new();
        write_pool_json(&mut buf, &pool).unwrap();
        assert_eq!(read_pool_json(&buf[..]).unwrap(), pool);
    }
}
