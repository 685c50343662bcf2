//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits nonzero if any fail.

use std::path::Path;
use std::time::{Duration, Instant};

use clap::Parser;
use tpa::bounds::{poisson_tail_bound, run_ras, RasConfig};
use tpa::diagnostics::{count_chi_square, log_measure_offsets, scaled_spacings};
use tpa::models::gibbs::{brute_force_log_z, brute_force_z, expected_run_cost, GibbsFamily, LatticeGraph};
use tpa::models::posterior::{evidence_estimate, L1BallFamily};
use tpa::omnithermal::{
    anchored_partition_curve, counting_process, evidence_integral, evidence_integral_with, sup_deviation,
    sup_deviation_bound, Prior,
};
use tpa::rng::phase;
use tpa::schedule::{build_schedule, schedule_quality};
use tpa::stats::{ks_critical_value, ks_statistic, mean_sd, poisson_chi_square};
use tpa::tpa::DEFAULT_ITERATION_CAP;
use tpa::{pool_runs, run_batch, ExpInterval, NestedFamily, RngStreams};
use tpa_cli::{execute, Cli};

const CAP: usize = DEFAULT_ITERATION_CAP;
const SIGNIFICANCE: f64 = 0.001;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: String) -> Verdict {
    Verdict { passed, detail }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn cli(args: &[&str]) -> serde_json::Value {
    let cli = Cli::try_parse_from(std::iter::once("tpa").chain(args.iter().copied())).expect("valid arguments");
    execute(cli).unwrap_or_else(|e| panic!("{args:?}: {e}")).summary
}

/// Data rows of one of the emitted CSV files, as floats.
fn csv_rows(path: &Path) -> Vec<Vec<f64>> {
    std::fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("{}: {e}", path.display()))
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(|c| c.parse().unwrap()).collect())
        .collect()
}

fn ising_4x4() -> LatticeGraph {
    LatticeGraph::lattice(4, 4, false).unwrap()
}

fn poisson_count_law() -> Verdict {
    let start = Instant::now();
    let fam = ExpInterval::with_log_ratio(1.0).unwrap();
    let traces = run_batch(&fam, &RngStreams::new(101), phase::RUNS, 10_000, CAP).unwrap();
    let chi = count_chi_square(&traces, 1.0);
    let mean = traces.iter().map(|t| t.count as f64).sum::<f64>() / traces.len() as f64;
    let elapsed = start.elapsed();
    verdict(
        chi.passes(SIGNIFICANCE) && (mean - 1.0).abs() <= 0.03 && elapsed < Duration::from_secs(10),
        format!("mean={mean:.4} chi2={:.2} dof={} p={:.4} runtime={:.2}s", chi.statistic, chi.dof, chi.p_value, secs(elapsed)),
    )
}

fn exponential_spacings() -> Verdict {
    // 100 runs over a log ratio of 200 pool about 20,000 points; the first 10,000 spacings are tested.
    let fam = ExpInterval::with_log_ratio(200.0).unwrap();
    let traces = run_batch(&fam, &RngStreams::new(202), phase::RUNS, 100, CAP).unwrap();
    let pool = pool_runs(&traces, &fam).unwrap();
    let spacings = scaled_spacings(&pool, &fam).unwrap();
    if spacings.len() < 10_000 {
        return verdict(false, format!("only {} spacings", spacings.len()));
    }
    let sample = &spacings[..10_000];
    let d = ks_statistic(sample, |x| -(-x).exp_m1());
    let crit = ks_critical_value(SIGNIFICANCE, sample.len());
    verdict(d < crit, format!("n=10000 D={d:.5} critical={crit:.5}"))
}

fn ising_oracle_match() -> Verdict {
    let start = Instant::now();
    let g = ising_4x4();
    let lambda = brute_force_log_z(1.0, &g).unwrap() - 16.0 * std::f64::consts::LN_2;
    let fam = GibbsFamily::exact(g, 1.0).unwrap();
    let traces = run_batch(&fam, &RngStreams::new(303), phase::RUNS, 1000, CAP).unwrap();
    let est = pool_runs(&traces, &fam).unwrap().log_ratio_estimate().estimate;
    let tol = 3.0 * (lambda / 1000.0).sqrt();
    let elapsed = start.elapsed();
    verdict(
        (est - lambda).abs() <= tol && elapsed < Duration::from_secs(120),
        format!("N/k={est:.4} lambda*={lambda:.4} |diff|={:.4} tol={tol:.4} runtime={:.2}s", (est - lambda).abs(), secs(elapsed)),
    )
}

fn z_zero_anchor() -> Verdict {
    let graphs = vec![
        ("edge", LatticeGraph::new(2, vec![(0, 1)]).unwrap()),
        ("triangle", LatticeGraph::new(3, vec![(0, 1), (1, 2), (0, 2)]).unwrap()),
        ("isolated", LatticeGraph::new(5, vec![]).unwrap()),
        ("2x2", LatticeGraph::lattice(2, 2, false).unwrap()),
        ("3x3 torus", LatticeGraph::lattice(3, 3, true).unwrap()),
        ("4x4", ising_4x4()),
        ("4x4 torus", LatticeGraph::lattice(4, 4, true).unwrap()),
        ("star", LatticeGraph::from_edge_list("0 1\n0 2\n0 3\n0 4\n0 5\n", None).unwrap()),
    ];
    let mut bad = Vec::new();
    for (name, g) in &graphs {
        let z = brute_force_z(0.0, g).unwrap();
        if z != 2f64.powi(g.vertex_count() as i32) {
            bad.push(format!("{name}: {z}"));
        }
    }
    verdict(bad.is_empty(), format!("{} graphs checked {}", graphs.len(), bad.join("; ")))
}

fn expected_cost() -> Verdict {
    let g = LatticeGraph::new(2, vec![(0, 1)]).unwrap();
    let target = expected_run_cost(1.0, &g).unwrap();
    let closed = 1.0 + (2.0 * std::f64::consts::E.powi(2) + 2.0 * std::f64::consts::E).ln() - 2.0 * std::f64::consts::LN_2;
    let fam = GibbsFamily::exact(g, 1.0).unwrap();
    let traces = run_batch(&fam, &RngStreams::new(505), phase::RUNS, 5000, CAP).unwrap();
    let mean = traces.iter().map(|t| t.draws() as f64).sum::<f64>() / traces.len() as f64;
    let rel = (mean / target - 1.0).abs();
    verdict(
        rel <= 0.05 && (target - closed).abs() < 1e-12,
        format!("mean draws={mean:.4} expected={target:.4} rel.err={:.2}%", 100.0 * rel),
    )
}

fn ras_contract() -> Verdict {
    let start = Instant::now();
    let fam = ExpInterval::with_log_ratio(2.0).unwrap();
    let config = RasConfig::new(0.3, 0.25).unwrap();
    let truth = 2f64.exp();
    let master = RngStreams::new(606);
    let mut good = 0;
    for rep in 0..100 {
        let r = run_ras(&fam, &config, &master.fork(rep), CAP).unwrap();
        let f = r.estimate / truth;
        if (1.0 / 1.3..=1.3).contains(&f) {
            good += 1;
        }
    }
    let elapsed = start.elapsed();
    verdict(
        good >= 67 && elapsed < Duration::from_secs(60),
        format!("{good}/100 within factor 1.3 (need 67) runtime={:.2}s", secs(elapsed)),
    )
}

fn tail_bound_dominance() -> Verdict {
    let fam = ExpInterval::with_log_ratio(1.0).unwrap();
    let lambda = 1.0;
    let experiments = 5000u64;
    let eps_grid = [0.3, 0.5, 0.8];
    let mut passed = true;
    let mut worst = String::new();
    let mut worst_margin = f64::INFINITY;
    for k in [20u64, 50, 100] {
        let master = RngStreams::new(707 + k);
        let mut point_hits = [0u64; 3];
        let mut sup_hits = [0u64; 3];
        for e in 0..experiments {
            let streams = master.fork(e);
            let traces = run_batch(&fam, &streams, phase::RUNS, k, CAP).unwrap();
            let pool = pool_runs(&traces, &fam).unwrap();
            let dev = (pool.n() as f64 / k as f64 - lambda).abs();
            let jumps = log_measure_offsets(&pool, &fam).unwrap();
            let sup = sup_deviation(&jumps, k, lambda);
            for (i, &eps) in eps_grid.iter().enumerate() {
                point_hits[i] += (dev >= eps) as u64;
                sup_hits[i] += (sup >= eps) as u64;
            }
        }
        for (i, &eps) in eps_grid.iter().enumerate() {
            for (label, hits, bound) in [
                ("point", point_hits[i], poisson_tail_bound(eps, lambda, k).unwrap().probability()),
                ("sup", sup_hits[i], sup_deviation_bound(eps, lambda, k).unwrap().probability()),
            ] {
                let freq = hits as f64 / experiments as f64;
                let sigma = (bound * (1.0 - bound) / experiments as f64).sqrt();
                let margin = bound + 3.0 * sigma - freq;
                if margin < 0.0 {
                    passed = false;
                }
                if margin < worst_margin {
                    worst_margin = margin;
                    worst = format!("{label} k={k} eps={eps}: freq={freq:.4} bound={bound:.4}");
                }
            }
        }
    }
    verdict(passed, format!("18 cells x 5000 experiments, smallest margin at {worst}"))
}

fn omnithermal_consistency() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let mut problems = Vec::new();
    let mut files = 0;
    let cases: Vec<Vec<String>> = vec![
        "run --family expinterval --lambda 1 --k 100 --seed 1",
        "run --family expinterval --lambda 1 --k 100 --seed 2",
        "run --family expinterval --lambda 5 --k 7 --seed 3",
        "run --family ising --beta 2 --k 1 --seed 4",
        "run --family ising --beta 2 --k 16 --seed 5",
        "run --family l1ball --shell-radius 2 --center-radius 0.1 --k 200 --seed 6",
        "omni --family ising --width 2 --height 2 --beta 2 --k 1000 --seed 7",
        "omni --family expinterval --lambda 3 --k 1000 --seed 8",
        "omni --family l1ball --dim 2 --shell-radius 2 --center-radius 0.1 --k 300 --seed 9",
    ]
    .into_iter()
    .map(|s| s.split(' ').map(String::from).collect())
    .collect();
    for (i, case) in cases.iter().enumerate() {
        let out = dir.path().join(i.to_string());
        let mut args: Vec<&str> = case.iter().map(String::as_str).collect();
        args.extend(["--output-dir", out.to_str().unwrap()]);
        let summary = cli(&args);
        let (n, k) = if args[0] == "run" {
            (summary["estimate"]["n"].as_u64().unwrap(), summary["k"].as_u64().unwrap())
        } else {
            (summary["n"].as_u64().unwrap(), summary["k"].as_u64().unwrap())
        };
        let center = summary["family"]["beta_center"].as_f64().unwrap();
        let anchor = summary["family"]["log_center_measure"].as_f64().unwrap();
        let expected = (n as f64 / k as f64).exp();

        let ratio = csv_rows(&out.join("curve.csv"));
        files += 1;
        let last = ratio.last().unwrap();
        if last[0] != center || last[3].to_bits() != expected.to_bits() {
            problems.push(format!("{case:?}: center value {} vs exp(N/k) {expected}", last[3]));
        }
        // Rows run from the shell down to the center: beta falls, the ratio may only rise.
        if ratio.windows(2).any(|w| w[1][0] >= w[0][0] || w[1][3] < w[0][3]) {
            problems.push(format!("{case:?}: ratio curve not nonincreasing in beta"));
        }

        let part = csv_rows(&out.join("partition_curve.csv"));
        files += 1;
        let last = part.last().unwrap();
        if (last[4] - anchor).abs() > 1e-12 || (part[0][4] - anchor - n as f64 / k as f64).abs() > 1e-9 {
            problems.push(format!("{case:?}: partition curve not anchored"));
        }
        if part.windows(2).any(|w| w[1][4] > w[0][4]) {
            problems.push(format!("{case:?}: partition curve rises as beta falls"));
        }
    }

    // Same identity on the library's step function.
    let fam = ExpInterval::with_log_ratio(2.0).unwrap();
    for seed in 0..20 {
        let traces = run_batch(&fam, &RngStreams::new(seed), phase::RUNS, 37, CAP).unwrap();
        let pool = pool_runs(&traces, &fam).unwrap();
        let curve = counting_process(&pool);
        let at_center = curve.ratio_at(fam.beta_center()).unwrap();
        if at_center.to_bits() != (pool.n() as f64 / 37.0).exp().to_bits() {
            problems.push(format!("library seed {seed}: {at_center}"));
        }
    }
    verdict(problems.is_empty(), format!("{files} CSV files + 20 library curves {}", problems.join("; ")))
}

fn well_balanced_schedules() -> Verdict {
    // Log ratio 10 gives about ten rungs per schedule. At log ratio 1 a 400-run pool holds a
    // single interior rung whose gap is cut short by the center, biasing it low.
    let fam = ExpInterval::with_log_ratio(10.0).unwrap();
    let master = RngStreams::new(909);
    let mut gaps = Vec::new();
    for s in 0..1000 {
        let traces = run_batch(&fam, &master.fork(s), phase::RUNS, 400, CAP).unwrap();
        let pool = pool_runs(&traces, &fam).unwrap();
        let schedule = build_schedule(&pool, 400).unwrap();
        gaps.extend(schedule_quality(&schedule, &fam).unwrap().interior_gaps);
    }
    let (mean, sd) = mean_sd(&gaps);
    verdict(
        (mean - 1.0).abs() <= 0.02 && (0.03..=0.08).contains(&sd),
        format!("{} interior gaps mean={mean:.4} sd={sd:.4}", gaps.len()),
    )
}

fn evidence_pipeline() -> Verdict {
    let truth = 2.0 * (1.0 - (-2.0f64).exp());
    let fam = L1BallFamily::exp_l1(1, 0.1, 2.0).unwrap();
    let mut good = 0;
    for seed in 0..50 {
        let est = evidence_estimate(&fam, 2000, 10_000, &RngStreams::new(1000 + seed), CAP).unwrap();
        if (est.evidence / truth - 1.0).abs() <= 0.10 {
            good += 1;
        }
    }

    let g = LatticeGraph::lattice(2, 2, false).unwrap();
    let h = -(1.0 + g.edges().len() as f64);
    let prior = Prior::Uniform { lower: 0.0, upper: 2.0 };
    let exact = evidence_integral_with(|b| brute_force_log_z(b, &g), &prior, h, 2.0, 1e-3).unwrap().value;
    let ising = GibbsFamily::exact(g, 2.0).unwrap();
    let curve_estimate = |seed: u64| {
        let traces = run_batch(&ising, &RngStreams::new(seed), phase::RUNS, 1000, CAP).unwrap();
        let pool = pool_runs(&traces, &ising).unwrap();
        let curve = anchored_partition_curve(&pool, ising.log_center_measure()).unwrap();
        evidence_integral(&curve, &prior, h, 2.0, 1e-3).unwrap().value
    };
    let primary = curve_estimate(2024);
    let rel = (primary / exact - 1.0).abs();
    let seeds_within = (0..50).filter(|&s| (curve_estimate(s) / exact - 1.0).abs() <= 0.15).count();
    verdict(
        good >= 45 && rel <= 0.15,
        format!(
            "l1: {good}/50 within 10% of {truth:.5} (need 45); 2x2 ising: {primary:.5} vs {exact:.5} rel.err={:.2}% \
             ({seeds_within}/50 other seeds within 15%)",
            100.0 * rel
        ),
    )
}

fn figure_one_shape() -> Verdict {
    let g = ising_4x4();
    let lambda = brute_force_log_z(2.0, &g).unwrap() - 16.0 * std::f64::consts::LN_2;
    let dir = tempfile::tempdir().unwrap();
    let mut steps = Vec::new();
    let mut problems = Vec::new();
    for seed in 0..200u64 {
        let out = dir.path().join(seed.to_string());
        let seed_arg = seed.to_string();
        cli(&["run", "--family", "ising", "--beta", "2", "--k", "1", "--seed", &seed_arg, "--output-dir", out.to_str().unwrap()]);
        let rows = csv_rows(&out.join("partition_curve.csv"));
        // Shell row, one row per breakpoint, center row.
        let breakpoints = &rows[1..rows.len() - 1];
        let mut prev = &rows[0];
        for row in breakpoints {
            if row[0] >= prev[0] || row[2] != prev[2] + 1.0 || ((prev[4] - row[4]) - 1.0).abs() > 1e-12 {
                problems.push(format!("seed {seed}: step {:?} -> {:?}", prev, row));
                break;
            }
            prev = row;
        }
        steps.push(breakpoints.len() as u64);
    }
    let chi = poisson_chi_square(&steps, lambda);
    let mean = steps.iter().sum::<u64>() as f64 / steps.len() as f64;
    verdict(
        problems.is_empty() && chi.passes(SIGNIFICANCE),
        format!(
            "200 staircases, mean steps={mean:.3} vs lambda={lambda:.4} chi2={:.2} dof={} p={:.4} {}",
            chi.statistic,
            chi.dof,
            chi.p_value,
            problems.join("; ")
        ),
    )
}

fn main() {
    type Check = fn() -> Verdict;
    let criteria: [(&str, Check); 11] = [
        ("Poisson count law", poisson_count_law),
        ("exponential spacings", exponential_spacings),
        ("Ising oracle match", ising_oracle_match),
        ("Z(0) anchor", z_zero_anchor),
        ("expected run cost", expected_cost),
        ("two-phase RAS contract", ras_contract),
        ("tail bound dominance", tail_bound_dominance),
        ("omnithermal consistency", omnithermal_consistency),
        ("well-balanced schedules", well_balanced_schedules),
        ("evidence pipeline", evidence_pipeline),
        ("staircase shape", figure_one_shape),
    ];
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let v = check();
        if !v.passed {
            failures += 1;
        }
        println!("acceptance {:>2} {:<26} {}  {}", i + 1, name, if v.passed { "PASS" } else { "FAIL" }, v.detail);
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
