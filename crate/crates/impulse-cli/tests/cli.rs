//! End-to-end tests of the `impulse` binary: exit-code contract, output
//! formats, and byte-identical reruns under a fixed seed.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_impulse"))
}

fn assets() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../assets")
}

fn out_dir(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn parse_csv(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(|c| c.to_string()).collect())
        .collect()
}

#[test]
fn check_passes_on_commuting_system() {
    let dir = out_dir("check_ok");
    let out = run(&[
        "--out-dir",
        dir.to_str().unwrap(),
        "check",
        assets().join("toy_system.dsl").to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("check_report.json").exists());
    assert!(dir.join("check_manifest.json").exists());
}

#[test]
fn check_fails_on_noncommuting_pair() {
    let dir = out_dir("check_fail");
    let out = run(&[
        "--out-dir",
        dir.to_str().unwrap(),
        "check",
        assets().join("noncommuting_system.dsl").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("[g1, g2]"), "stderr: {err}");
}

#[test]
fn check_rejects_malformed_dsl_with_position() {
    let dir = out_dir("check_broken");
    let out = run(&[
        "--out-dir",
        dir.to_str().unwrap(),
        "check",
        assets().join("broken_system.dsl").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("2:"), "position missing in: {err}");
}

#[test]
fn simulate_reproduces_terminal_value() {
    let dir = out_dir("simulate_toy");
    let out = run(&[
        "--out-dir",
        dir.to_str().unwrap(),
        "simulate",
        assets().join("toy_system.dsl").to_str().unwrap(),
        assets().join("toy_control.json").to_str().unwrap(),
        "--x0",
        "1.3",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = parse_csv(&dir.join("trajectory.csv"));
    assert_eq!(rows[0], vec!["t", "side", "x1", "u1"]);
    // Terminal row: x(1) = 1.3 e^{-1/2} after the final jump.
    let last = rows.last().unwrap();
    assert_eq!(last[1], "R");
    let x_b: f64 = last[2].parse().unwrap();
    let expect = 1.3 * (-0.5f64).exp();
    assert!((x_b - expect).abs() < 1e-8, "x(1) = {x_b} vs {expect}");
    // Jump rows carry both one-sided values.
    assert!(rows.iter().any(|r| r[1] == "L"));
}

#[test]
fn simulate_direct_matches_pd_for_ac_control() {
    let dir_pd = out_dir("simulate_pd");
    let dir_direct = out_dir("simulate_direct");
    for (dir, method) in [(&dir_pd, "pd"), (&dir_direct, "direct")] {
        let out = run(&[
            "--out-dir",
            dir.to_str().unwrap(),
            "simulate",
            assets().join("toy_system.dsl").to_str().unwrap(),
            assets().join("ramp_control.json").to_str().unwrap(),
            "--x0",
            "0.9",
            "--method",
            method,
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = parse_csv(&dir_pd.join("trajectory.csv"));
    let b = parse_csv(&dir_direct.join("trajectory.csv"));
    assert_eq!(a.len(), b.len());
    for (ra, rb) in a.iter().skip(1).zip(b.iter().skip(1)) {
        let xa: f64 = ra[2].parse().unwrap();
        let xb: f64 = rb[2].parse().unwrap();
        assert!((xa - xb).abs() < 1e-7, "{xa} vs {xb}");
    }
}

#[test]
fn simulate_rejects_control_outside_domain() {
    let dir = out_dir("simulate_bad");
    let out = run(&[
        "--out-dir",
        dir.to_str().unwrap(),
        "simulate",
        assets().join("toy_system.dsl").to_str().unwrap(),
        assets().join("bad_control.json").to_str().unwrap(),
        "--x0",
        "1.0",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("outside U"), "stderr: {err}");
}

#[test]
fn optimize_toy_problem_converges() {
    let dir = out_dir("optimize_toy");
    let out = run(&[
        "--out-dir",
        dir.to_str().unwrap(),
        "optimize",
        assets().join("toy_problem.json").to_str().unwrap(),
        "--budget",
        "3000",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("value_report.json")).unwrap())
            .unwrap();
    let value = report["best_value"].as_f64().unwrap();
    let expect = (-4.0f64).exp();
    assert!((value - expect).abs() < 2e-3, "value {value} vs {expect}");
    assert!(dir.join("value_trace.csv").exists());
}

#[test]
fn study_equivalence_exit_zero() {
    let dir = out_dir("study_equiv");
    let out = run(&[
        "--out-dir",
        dir.to_str().unwrap(),
        "study",
        "equivalence",
        assets().join("toy_system.dsl").to_str().unwrap(),
        assets().join("step_control.json").to_str().unwrap(),
        "--x0",
        "1.0",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn reach_output_independent_of_thread_count() {
    let dir1 = out_dir("reach_t1");
    let dir2 = out_dir("reach_t2");
    for (dir, threads) in [(&dir1, "1"), (&dir2, "2")] {
        let out = run(&[
            "--seed",
            "5",
            "--threads",
            threads,
            "--out-dir",
            dir.to_str().unwrap(),
            "reach",
            assets().join("toy_problem.json").to_str().unwrap(),
            "--classes",
            "l1",
            "--n",
            "150",
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = std::fs::read(dir1.join("cloud_l1.csv")).unwrap();
    let b = std::fs::read(dir2.join("cloud_l1.csv")).unwrap();
    assert_eq!(a, b, "thread count changed the output bytes");
}

#[test]
fn reach_is_byte_deterministic() {
    let dir1 = out_dir("reach_1");
    let dir2 = out_dir("reach_2");
    for dir in [&dir1, &dir2] {
        let out = run(&[
            "--seed",
            "99",
            "--out-dir",
            dir.to_str().unwrap(),
            "reach",
            assets().join("toy_problem.json").to_str().unwrap(),
            "--classes",
            "l1,ac",
            "--n",
            "200",
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for name in ["cloud_l1.csv", "cloud_ac.csv", "hausdorff.csv"] {
        let a = std::fs::read(dir1.join(name)).unwrap();
        let b = std::fs::read(dir2.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between reruns");
    }
}
