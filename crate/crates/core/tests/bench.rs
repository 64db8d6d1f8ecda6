mod common;

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use uqlb::backends::AllocationMode;
use uqlb::bench::{
    cell_dir, compare, load_results, run_suite, BenchError, Launcher, RunOptions, Suite,
};

use common::block_on;

fn sim_opts(out: &Path, modes: &[AllocationMode]) -> RunOptions {
    let mut o = RunOptions::new(out, Launcher::Sim);
    o.modes = modes.to_vec();
    o
}

#[test]
fn every_builtin_suite_resolves() {
    for name in Suite::builtin_names() {
        let s = Suite::builtin(name).unwrap();
        assert_eq!(s.name, name);
        assert!(s.n_evaluations > 0 && !s.depths.is_empty() && !s.seeds.is_empty());
    }
    assert!(Suite::default_set().iter().all(|s| s.name != "eigen-5000"));
    assert!(matches!(Suite::resolve("nope"), Err(BenchError::UnknownSuite(n)) if n == "nope"));
}

#[test]
fn sim_runs_are_byte_reproducible() {
    let suite = Suite::builtin("synthetic-gs2").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let mut o = sim_opts(out, &[AllocationMode::PerJob, AllocationMode::Bulk]);
        o.seeds = Some(vec![3, 4]);
        block_on(run_suite(&suite, &o)).unwrap();
    }
    let mut files = 0;
    for mode in [AllocationMode::PerJob, AllocationMode::Bulk] {
        for depth in [2, 10] {
            for seed in [3, 4] {
                let name = format!("records-{seed}.csv");
                let x =
                    std::fs::read(cell_dir(&a, "synthetic-gs2", mode, depth).join(&name)).unwrap();
                let y =
                    std::fs::read(cell_dir(&b, "synthetic-gs2", mode, depth).join(&name)).unwrap();
                assert_eq!(x, y);
                assert!(!x.is_empty());
                files += 1;
            }
        }
    }
    assert_eq!(files, 8);
}

#[test]
fn gp_bulk_depth_ten_sim_is_fast() {
    let dir = tempfile::tempdir().unwrap();
    let t0 = Instant::now();
    let mut o = sim_opts(dir.path(), &[AllocationMode::Bulk]);
    o.depths = Some(vec![10]);
    let report = block_on(run_suite(&Suite::builtin("gp").unwrap(), &o)).unwrap();
    assert!(t0.elapsed().as_secs_f64() < 60.0);
    assert!(report.all_complete());
    let cell = report.cell(AllocationMode::Bulk, 10).unwrap();
    assert!(cell.runs.iter().all(|r| r.n_records == 100));
    let text = std::fs::read_to_string(
        cell_dir(dir.path(), "gp", AllocationMode::Bulk, 10).join("records-1.csv"),
    )
    .unwrap();
    assert_eq!(text.lines().count(), 101);
}

#[test]
fn eigen_bulk_has_lower_slr_than_per_job() {
    let dir = tempfile::tempdir().unwrap();
    let mut o = sim_opts(dir.path(), &[AllocationMode::PerJob, AllocationMode::Bulk]);
    o.depths = Some(vec![2]);
    let report = block_on(run_suite(&Suite::builtin("eigen-100").unwrap(), &o)).unwrap();
    assert_eq!(report.cells.len(), 2);
    let per = report
        .cell(AllocationMode::PerJob, 2)
        .unwrap()
        .mean_task_slr
        .unwrap();
    let bulk = report
        .cell(AllocationMode::Bulk, 2)
        .unwrap()
        .mean_task_slr
        .unwrap();
    assert!(bulk < per, "bulk {bulk} perjob {per}");
}

#[test]
fn compare_identity_and_missing_keys() {
    let dir = tempfile::tempdir().unwrap();
    let mut o = sim_opts(dir.path(), &[AllocationMode::Bulk]);
    o.seeds = Some(vec![1]);
    block_on(run_suite(&Suite::builtin("gp").unwrap(), &o)).unwrap();
    let root = dir.path().join("gp/bulk");
    let rows = compare(&root, &root).unwrap();
    assert_eq!(rows.len(), 2);
    for r in &rows {
        assert_eq!(
            (r.makespan_ratio, r.overhead_ratio, r.makespan_reduction),
            (1.0, 1.0, 0.0)
        );
        assert_eq!(r.slr_a, r.slr_b);
    }
    let partial = dir.path().join("partial");
    std::fs::create_dir_all(partial.join("2")).unwrap();
    std::fs::copy(root.join("2/summary.json"), partial.join("2/summary.json")).unwrap();
    match compare(&root, &partial) {
        Err(BenchError::KeyMismatch(k)) => assert_eq!(k, "10"),
        other => panic!("{other:?}"),
    }
    assert_eq!(load_results(&partial).unwrap().len(), 1);
}

fn gs2_rows(calibration: Option<f64>) -> Vec<uqlb::bench::CompareRow> {
    let mut suite = Suite::builtin("synthetic-gs2").unwrap();
    if let Some(c) = calibration {
        suite.sim.calibrate_reinit_to_task_mean = Some(c);
    }
    let dir = tempfile::tempdir().unwrap();
    block_on(run_suite(
        &suite,
        &sim_opts(dir.path(), &[AllocationMode::PerJob, AllocationMode::Bulk]),
    ))
    .unwrap();
    let root = dir.path().join("synthetic-gs2");
    compare(&root.join("perjob"), &root.join("bulk")).unwrap()
}

#[test]
fn gs2_makespan_reduction_matches_the_reinit_calibration() {
    // reinit = 0.6 of the mean task time, so perfect packing gives
    // bulk / perjob = 1 / 1.6
    for r in gs2_rows(None) {
        assert!(r.makespan_ratio <= 0.70, "{r:?}");
        assert!((r.makespan_ratio - 1.0 / 1.6).abs() < 0.06, "{r:?}");
        assert_eq!(r.makespan_flag, r.makespan_reduction >= 0.38);
    }
    let heavier = gs2_rows(Some(0.75));
    assert!(heavier.iter().all(|r| r.makespan_flag), "{heavier:?}");
}

fn bench() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bench"))
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = bench()
        .args(["run", "no-such-suite", "--sim", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no-such-suite"));

    let out = bench()
        .args([
            "run", "gp", "--sim", "--mode", "bulk", "--depth", "2", "--seeds", "1", "--out",
        ])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(cell_dir(dir.path(), "gp", AllocationMode::Bulk, 2)
        .join("summary.json")
        .is_file());

    let root = dir.path().join("gp/bulk");
    let out = bench()
        .args(["compare", "--json"])
        .arg(&root)
        .arg(&root)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let rows: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(rows[0]["makespan_ratio"], 1.0);

    let out = bench()
        .args(["compare"])
        .arg(&root)
        .arg(dir.path().join("missing"))
        .output()
        .unwrap();
    assert_ne!(out.status.code(), Some(0));
    assert_eq!(
        bench().arg("--bogus").output().unwrap().status.code(),
        Some(2)
    );
}
