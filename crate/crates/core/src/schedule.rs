//! Well-balanced cooling schedules read off the order statistics of a pool.
//!
//! With `k` runs pooled, every `k`-th point (counting down from the shell)
//! is separated from the previous one by a Gamma(k, 1/k) gap in log measure,
//! so consecutive rungs have measure ratio close to `1/e`.

use std::io::Write;

use serde::Serialize;

use crate::error::{invalid, Result, TpaError};
use crate::family::NestedFamily;
use crate::stats::mean_sd;
use crate::tpa::PooledProcess;

pub const SCHEDULE_SCHEMA: &str = "tpa.schedule.v1";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoolingSchedule {
    /// Strictly descending, from the shell down to the center.
    pub alphas: Vec<f64>,
    pub k_used: u64,
}

/// Picks `beta_(k), beta_(2k), ...` from the pool (descending order), pinned by shell and center.
///
/// The `N mod k` trailing points fall into the last rung, which runs to the center.
pub fn build_schedule(pool: &PooledProcess, k: u64) -> Result<CoolingSchedule> {
    if k == 0 {
        return Err(invalid("rung size k must be positive"));
    }
    let mut alphas = vec![pool.beta_shell];
    for b in pool.points.iter().skip(k as usize - 1).step_by(k as usize) {
        if *b < *alphas.last().unwrap() {
            alphas.push(*b);
        }
    }
    if pool.beta_center < *alphas.last().unwrap() {
        alphas.push(pool.beta_center);
    }
    Ok(CoolingSchedule { alphas, k_used: k })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScheduleQuality {
    /// `ln mu(A(alpha_i)) - ln mu(A(alpha_{i+1}))` for every rung.
    pub gaps: Vec<f64>,
    /// Gaps of all rungs except the last, which absorbs the remainder.
    pub interior_gaps: Vec<f64>,
    pub interior_mean: f64,
    pub interior_sd: f64,
}

pub fn schedule_quality<F>(schedule: &CoolingSchedule, family: &F) -> Result<ScheduleQuality>
where
    F: NestedFamily + ?Sized,
{
    let t = schedule
        .alphas
        .iter()
        .map(|&a| family.log_measure(a))
        .collect::<Option<Vec<f64>>>()
        .ok_or_else(|| TpaError::Unsupported("family has no closed-form log-measure".into()))?;
    let gaps: Vec<f64> = t.windows(2).map(|w| w[0] - w[1]).collect();
    let interior_gaps = gaps[..gaps.len().saturating_sub(1)].to_vec();
    let (interior_mean, interior_sd) = mean_sd(&interior_gaps);
    Ok(ScheduleQuality { gaps, interior_gaps, interior_mean, interior_sd })
}

/// CSV with a schema comment line and columns `index,alpha`.
pub fn write_schedule_csv<W: Write>(mut out: W, schedule: &CoolingSchedule) -> Result<()> {
    writeln!(out, "# schema={SCHEDULE_SCHEMA} k={}", schedule.k_used)?;
    writeln!(out, "index,alpha")?;
    for (i, a) in schedule.alphas.iter().enumerate() {
        writeln!(out, "{i},{a}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::family::ExpInterval;
    use proptest::prelude::*;

    #[test]
    fn order_statistic_example() {
        let pool = PooledProcess::new(2, 1.0, 0.0, vec![0.9, 0.8, 0.6, 0.5, 0.3, 0.2]).unwrap();
        let s = build_schedule(&pool, 2).unwrap();
        assert_eq!(s.alphas, vec![1.0, 0.8, 0.5, 0.2, 0.0]);
    }

    #[test]
    fn remainder_goes_to_last_rung() {
        let pool = PooledProcess::new(2, 1.0, 0.0, vec![0.9, 0.8, 0.6, 0.5, 0.3]).unwrap();
        let s = build_schedule(&pool, 2).unwrap();
        assert_eq!(s.alphas, vec![1.0, 0.8, 0.5, 0.0]);
    }

    #[test]
    fn empty_pool_and_bad_k() {
        let pool = PooledProcess::new(3, 1.0, 0.0, vec![]).unwrap();
        assert_eq!(build_schedule(&pool, 3).unwrap().alphas, vec![1.0, 0.0]);
        assert!(build_schedule(&pool, 0).is_err());
    }

    #[test]
    fn endpoints_only_gap_is_lambda() {
        let fam = ExpInterval::with_log_ratio(2.5).unwrap();
        let pool = PooledProcess::new(1, 0.0, -2.5, vec![]).unwrap();
        let q = schedule_quality(&build_schedule(&pool, 1).unwrap(), &fam).unwrap();
        assert_eq!(q.gaps, vec![2.5]);
        assert!(q.interior_gaps.is_empty());
    }

    #[test]
    fn arithmetic_progression_gives_equal_gaps() {
        let fam = ExpInterval::with_log_ratio(4.0).unwrap();
        let points: Vec<f64> = (1..16).map(|i| -(i as f64) * 0.25).collect();
        let pool = PooledProcess::new(4, 0.0, -4.0, points).unwrap();
        let q = schedule_quality(&build_schedule(&pool, 4).unwrap(), &fam).unwrap();
        assert_eq!(q.gaps.len(), 4);
        assert!(q.gaps.iter().all(|g| (g - 1.0).abs() < 1e-12), "{:?}", q.gaps);
    }

    #[test]
    fn csv_layout() {
        let pool = PooledProcess::new(2, 1.0, 0.0, vec![0.9, 0.8]).unwrap();
        let mut buf = Vec::new();
        write_schedule_csv(&mut buf, &build_schedule(&pool, 2).unwrap()).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "# schema=tpa.schedule.v1 k=2\nindex,alpha\n0,1\n1,0.8\n2,0\n");
    }

    proptest! {
        #[test]
        fn rungs_come_from_pool_and_descend(
            raw in proptest::collection::vec(0.001f64..0.999, 0..200),
            k in 1u64..12,
        ) {
            let pool = PooledProcess::new(k, 1.0, 0.0, raw).unwrap();
            let s = build_schedule(&pool, k).unwrap();
            prop_assert_eq!(s.alphas[0], 1.0);
            prop_assert_eq!(*s.alphas.last().unwrap(), 0.0);
            prop_assert!(s.alphas.windows(2).all(|w| w[1] < w[0]));
            for a in &s.alphas[1..s.alphas.len() - 1] {
                prop_assert!(pool.points.contains(a));
            }
            prop_assert_eq!(&build_schedule(&pool, k).unwrap(), &s);
        }
    }
}
