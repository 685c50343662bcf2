use std::io::BufReader;

use tpa::bounds::{ar_ratio_with_samples, run_ras, RasConfig};
use tpa::models::gibbs::{brute_force_log_z, GibbsFamily, LatticeGraph};
use tpa::omnithermal::{anchored_partition_curve, plan_runs};
use tpa::rng::phase;
use tpa::schedule::{build_schedule, schedule_quality};
use tpa::tpa::{read_pool_json, read_traces_jsonl, write_pool_json, write_traces_jsonl, DEFAULT_ITERATION_CAP};
use tpa::{exact_poisson_ci, normal_ci, pool_runs, pool_traces, run_batch, ExpInterval, NestedFamily, RngStreams};

#[test]
fn artifacts_survive_a_trip_through_files() {
    let fam = ExpInterval::with_log_ratio(3.0).unwrap();
    let traces = run_batch(&fam, &RngStreams::new(1), phase::RUNS, 64, DEFAULT_ITERATION_CAP).unwrap();
    let pool = pool_runs(&traces, &fam).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let tpath = dir.path().join("traces.jsonl");
    write_traces_jsonl(std::fs::File::create(&tpath).unwrap(), &traces).unwrap();
    let back = read_traces_jsonl(BufReader::new(std::fs::File::open(&tpath).unwrap())).unwrap();
    assert_eq!(back, traces);
    assert_eq!(pool_traces(&back, 0.0, -3.0).unwrap(), pool);

    let ppath = dir.path().join("pool.json");
    write_pool_json(std::fs::File::create(&ppath).unwrap(), &pool).unwrap();
    assert_eq!(read_pool_json(std::fs::File::open(&ppath).unwrap()).unwrap(), pool);
}

#[test]
fn batches_do_not_depend_on_thread_count() {
    let fam = ExpInterval::with_log_ratio(2.0).unwrap();
    let streams = RngStreams::new(9);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_batch(&fam, &streams, phase::RUNS, 300, DEFAULT_ITERATION_CAP).unwrap())
    };
    assert_eq!(run(1), run(6));
}

#[test]
fn ising_pipeline_end_to_end() {
    let g = LatticeGraph::lattice(3, 3, false).unwrap();
    let beta = 1.5;
    let lambda = brute_force_log_z(beta, &g).unwrap() - 9.0 * std::f64::consts::LN_2;
    let fam = GibbsFamily::exact(g.clone(), beta).unwrap();
    assert!((fam.log_measure(beta).unwrap() - fam.log_measure(0.0).unwrap() - lambda).abs() < 1e-9);

    let traces = run_batch(&fam, &RngStreams::new(4), phase::RUNS, 2000, DEFAULT_ITERATION_CAP).unwrap();
    let pool = pool_runs(&traces, &fam).unwrap();
    assert!(exact_poisson_ci(&pool, 0.001).unwrap().contains_log(lambda));
    assert!(normal_ci(&pool, 0.001).unwrap().contains_log(lambda));

    let curve = anchored_partition_curve(&pool, fam.log_center_measure()).unwrap();
    for b in [0.3, 0.8, 1.2] {
        let err = curve.log_partition_at(b).unwrap() - brute_force_log_z(b, &g).unwrap();
        assert!(err.abs() < 0.2, "beta {b}: {err}");
    }

    let schedule = build_schedule(&pool, 2000).unwrap();
    let q = schedule_quality(&schedule, &fam).unwrap();
    assert!(q.interior_gaps.iter().all(|g| (g - 1.0).abs() < 0.15), "{q:?}");
}

#[test]
fn ras_and_acceptance_rejection_agree_on_ising() {
    let g = LatticeGraph::lattice(2, 2, false).unwrap();
    let fam = GibbsFamily::exact(g.clone(), 1.0).unwrap();
    let truth = (brute_force_log_z(1.0, &g).unwrap() - 4.0 * std::f64::consts::LN_2).exp();
    let ras = run_ras(&fam, &RasConfig::new(0.1, 0.01).unwrap(), &RngStreams::new(5), DEFAULT_ITERATION_CAP).unwrap();
    assert!((ras.estimate / truth - 1.0).abs() < 0.1, "{} vs {truth}", ras.estimate);
    let ar = ar_ratio_with_samples(&fam, 200_000, &RngStreams::new(5)).unwrap();
    assert!((ar.ratio / truth - 1.0).abs() < 0.05, "{} vs {truth}", ar.ratio);
}

#[test]
fn planner_sizes_a_working_curve() {
    let fam = ExpInterval::with_log_ratio(2.0).unwrap();
    let plan = plan_runs(0.25, 0.05, 2.0).unwrap();
    let traces = run_batch(&fam, &RngStreams::new(6), phase::RUNS, plan.k_required, DEFAULT_ITERATION_CAP).unwrap();
    let pool = pool_runs(&traces, &fam).unwrap();
    let curve = tpa::omnithermal::counting_process(&pool);
    for i in 0..=40 {
        let beta = -2.0 * i as f64 / 40.0;
        let rel = curve.ratio_at(beta).unwrap() / (-beta).exp();
        assert!(rel < 1.25 && rel > 1.0 / 1.25, "beta {beta}: {rel}");
    }
}
