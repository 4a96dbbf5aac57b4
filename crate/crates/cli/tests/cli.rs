//! End-to-end checks of the command-line harness: file formats,
//! determinism across runs and thread counts, and exit codes.

use std::fs;
use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_truncdq"))
}

fn write_config(dir: &Path, replications: u64) -> std::path::PathBuf {
    let path = dir.join("config.json");
    fs::write(
        &path,
        format!(
            r#"{{
    "env": {{"type": "two_state", "params": {{"horizon": 400, "seed": 5}}}},
    "design": {{"kind": "bernoulli", "theta": 0.5}},
    "estimators": [
        {{"name": "dm"}},
        {{"name": "truncated_dq", "k": [0, 1, 3]}}
    ],
    "replications": {replications},
    "master_seed": 31,
    "truth": {{"method": "exact"}},
    "regenerate_env_per_trial": true
}}"#
        ),
    )
    .unwrap();
    path
}

#[test]
fn simulate_writes_deterministic_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), 2);
    for sub in ["a", "b"] {
        let out = dir.path().join(sub);
        let status = bin()
            .args(["simulate", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .status()
            .unwrap();
        assert!(status.success());
    }
    let a0 = fs::read(dir.path().join("a/trajectory_0000.csv")).unwrap();
    let b0 = fs::read(dir.path().join("b/trajectory_0000.csv")).unwrap();
    assert_eq!(a0, b0, "same config and seed must give identical bytes");

    let text = String::from_utf8(a0).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "t,state,action,reward");
    assert_eq!(lines.clone().count(), 400);
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(first[0], "1", "time is 1-based in files");
    assert!(dir.path().join("a/trajectory_0001.csv").exists());
    assert!(dir.path().join("a/manifest.json").exists());
}

#[test]
fn sweep_outputs_are_thread_count_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), 6);
    for (sub, threads) in [("t1", "1"), ("t2", "2")] {
        let out = dir.path().join(sub);
        let status = bin()
            .args(["sweep", "--threads", threads, "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .status()
            .unwrap();
        assert!(status.success());
    }
    for file in ["summary.json", "summary.csv", "records.csv"] {
        let a = fs::read(dir.path().join("t1").join(file)).unwrap();
        let b = fs::read(dir.path().join("t2").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs across thread counts");
    }
    let summary = fs::read_to_string(dir.path().join("t1/summary.csv")).unwrap();
    let mut lines = summary.lines();
    assert!(lines.next().unwrap().starts_with('#'));
    assert_eq!(
        lines.next().unwrap(),
        "estimator,param_k,mean,bias,mae,mae_pct,std,reps"
    );
}

#[test]
fn truth_bundle_contains_requested_grids() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    fs::write(
        &config,
        r#"{
    "env": {"type": "two_state", "params": {"horizon": 200, "seed": 9}},
    "design": {"kind": "bernoulli", "theta": 0.5},
    "estimators": [{"name": "dm"}],
    "replications": 1,
    "master_seed": 3,
    "truth": {"method": "exact", "k_grid": [0, 2, 7], "theta_grid": [0.0, 0.5, 1.0]}
}"#,
    )
    .unwrap();
    let out = dir.path().join("truth");
    let status = bin()
        .args(["truth", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let bundle: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("truth.json")).unwrap()).unwrap();
    let tau = bundle["tau"].as_f64().unwrap();
    let j1 = bundle["j_grid"]
        .as_array()
        .unwrap()
        .iter()
        .find(|p| p["theta"] == 1.0)
        .unwrap()["value"]
        .as_f64()
        .unwrap();
    let j0 = bundle["j_grid"]
        .as_array()
        .unwrap()
        .iter()
        .find(|p| p["theta"] == 0.0)
        .unwrap()["value"]
        .as_f64()
        .unwrap();
    assert!((tau - (j1 - j0)).abs() < 1e-10);
    let grads = bundle["grad_jk_half"].as_array().unwrap();
    assert_eq!(grads.len(), 3);
    assert!(bundle["delta"].as_f64().unwrap() <= 0.1 + 1e-12);
    assert!(bundle["gamma_hat"].as_f64().unwrap() <= 1.0);
}

#[test]
fn estimate_reads_trajectory_and_matches_dm() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), 1);
    let out = dir.path().join("sim");
    assert!(bin()
        .args(["simulate", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap()
        .success());
    let traj = out.join("trajectory_0000.csv");
    let run = |args: &[&str]| -> String {
        let output = bin()
            .args(["estimate", "--traj"])
            .arg(&traj)
            .args(args)
            .output()
            .unwrap();
        assert!(output.status.success());
        String::from_utf8(output.stdout).unwrap()
    };
    let dm_out = run(&["--estimator", "dm"]);
    let k0_out = run(&["--estimator", "truncated-dq", "--k", "0"]);
    let dm_val: f64 = dm_out.lines().nth(1).unwrap().split(',').nth(2).unwrap().parse().unwrap();
    let k0_val: f64 = k0_out.lines().nth(1).unwrap().split(',').nth(2).unwrap().parse().unwrap();
    assert_eq!(dm_val, k0_val);
}

#[test]
fn invalid_config_fails_with_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.json");
    fs::write(&config, r#"{"env": {"type": "two_state", "params": {}}}"#).unwrap();
    let out = bin()
        .args(["sweep", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(dir.path().join("x"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("config"), "diagnostic missing: {stderr}");
}

#[test]
fn validate_fast_passes() {
    let t0 = std::time::Instant::now();
    let out = bin().args(["validate", "--level", "fast"]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("checks passed"));
    assert!(!stdout.contains("[FAIL]"));
    assert!(t0.elapsed().as_secs() < 60, "fast level exceeded 60 s");
}
