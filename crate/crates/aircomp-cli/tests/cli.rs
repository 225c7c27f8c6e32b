//! End-to-end tests against the compiled binary: output schemas, strict
//! config handling, exit codes, and byte-level re-run determinism.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_aircomp"))
}

fn write(path: &Path, text: &str) {
    fs::write(path, text).unwrap();
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().unwrap();
    assert!(
        out.status.success(),
        "command {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

const TINY_TRAIN: &str = r#"{
  "device_count": 4,
  "dimension": 30,
  "class_count": 3,
  "sample_count": 240,
  "nuisance_dim": 2,
  "nuisance_noise": 3.0,
  "rounds": 4,
  "seeds": 2,
  "eval_every": 2,
  "scheme": ["adaptive", "full_power", "error_free"]
}"#;

#[test]
fn solve_once_single_device_at_peak() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    write(&cfg, r#"{"magnitudes": [1.0], "peak_powers": [2.5], "alpha": 1.0, "beta": 1.0}"#);
    run_ok(&[
        "solve-once",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    let csv = fs::read_to_string(dir.path().join("out/solution.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "beta,l_star,p_1,eta,mse_total,mse_individual,mse_composite,mse_noise"
    );
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "1");
    assert_eq!(row[1], "1"); // single device: threshold index 1
    assert_eq!(row[2], "2.5"); // at peak
    assert!(lines.next().is_none());
}

#[test]
fn sweep_beta_schema_and_threshold_monotonicity() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    write(
        &cfg,
        r#"{"magnitudes": [0.50, 0.82, 0.85, 1.16, 2.09, 2.83], "alpha": 0.25,
            "snr_db": 10.0, "beta_min": 0.001, "beta_max": 1000.0, "beta_step": 1.1}"#,
    );
    run_ok(&[
        "sweep-beta",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    let csv = fs::read_to_string(dir.path().join("out/sweep_beta.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "beta,l_star,p_1,p_2,p_3,p_4,p_5,p_6,eta,mse_total"
    );
    let mut prev_l = usize::MAX;
    let mut rows = 0;
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells.len(), 10);
        let l: usize = cells[1].parse().unwrap();
        assert!(l <= prev_l, "threshold index grew along the sweep");
        prev_l = l;
        rows += 1;
    }
    assert!(rows > 100, "expected a dense grid, got {rows} rows");
    // grid endpoints present
    assert!(csv.lines().nth(1).unwrap().starts_with("0,6,"));
    assert!(csv.lines().last().unwrap().starts_with("inf,"));
}

#[test]
fn oracle_check_reports_tiny_gap() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(&[
        "oracle-check",
        "--k",
        "2",
        "--trials",
        "5",
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/oracle_report.json")).unwrap())
            .unwrap();
    assert_eq!(report["instances"], 5);
    assert!(report["max_relative_gap"].as_f64().unwrap() <= 1e-6);
    assert_eq!(report["threshold_mismatches"], 0);
    assert_eq!(report["budget_exhausted"], 0);
}

#[test]
fn fl_run_outputs_are_rerun_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    write(&cfg, TINY_TRAIN);
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        run_ok(&["fl-run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    }
    for file in ["traces.csv", "traces.jsonl", "summary.json", "manifest.json"] {
        let a = fs::read(out_a.join(file)).unwrap();
        let b = fs::read(out_b.join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between identical runs");
    }
}

#[test]
fn seed_override_changes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    write(&cfg, TINY_TRAIN);
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    run_ok(&["fl-run", "--config", cfg.to_str().unwrap(), "--out", out_a.to_str().unwrap()]);
    run_ok(&[
        "fl-run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_b.to_str().unwrap(),
        "--seed",
        "99",
    ]);
    assert_ne!(
        fs::read(out_a.join("traces.csv")).unwrap(),
        fs::read(out_b.join("traces.csv")).unwrap()
    );
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_b.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 99);
    assert_eq!(manifest["config"]["master_seed"], 99);
}

#[test]
fn unknown_config_key_is_named_and_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    write(&cfg, r#"{"snr_dB": 10.0}"#);
    let out = bin()
        .args(["fl-run", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("snr_dB"), "stderr should name the bad key: {stderr}");
}

#[test]
fn missing_required_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["solve-once", "--out", dir.path().to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_config_value_exits_2_with_context() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    write(&cfg, r#"{"dimension": 31}"#); // not a multiple of class_count
    let out = bin()
        .args(["fl-run", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("dimension"), "stderr should explain: {stderr}");
}

#[test]
fn minimal_config_echoed_fully_populated_in_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    // analogue of the headline training setting, everything else defaulted
    write(&cfg, r#"{"device_count": 10, "snr_db": 10.0, "partition": "noniid", "rounds": 2, "seeds": 1, "sample_count": 400, "dimension": 40, "class_count": 4, "nuisance_dim": 3}"#);
    run_ok(&[
        "fl-run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/manifest.json")).unwrap())
            .unwrap();
    let config = &manifest["config"];
    // defaults are materialized
    assert_eq!(config["learning_rate"], 0.15);
    assert_eq!(config["beta_init"], 1.0);
    assert_eq!(config["master_seed"], 17);
    assert_eq!(config["partition"], "noniid");
    // and the resolved config round-trips through the strict parser
    let text = serde_json::to_string(config).unwrap();
    let reparsed: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(&reparsed, config);
    assert!(manifest["config_sha256"].as_str().unwrap().len() == 64);
    assert_eq!(manifest["schema_version"], 1);
}

#[test]
fn fig2_stats_emits_both_partitions() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    write(
        &cfg,
        r#"{"device_count": 4, "dimension": 30, "class_count": 3, "sample_count": 240,
            "nuisance_dim": 2, "rounds": 3, "seeds": 1}"#,
    );
    run_ok(&[
        "fig2-stats",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    let csv = fs::read_to_string(dir.path().join("out/gradient_stats.csv")).unwrap();
    assert!(csv.lines().next().unwrap()
        == "partition,replicate,round,alpha_true,beta_true,train_loss");
    assert!(csv.lines().any(|l| l.starts_with("iid,")));
    assert!(csv.lines().any(|l| l.starts_with("noniid,")));
}

#[test]
fn snr_sweep_covers_grid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    write(
        &cfg,
        r#"{"device_count": 4, "dimension": 30, "class_count": 3, "sample_count": 240,
            "nuisance_dim": 2, "rounds": 3, "seeds": 1, "scheme": "adaptive",
            "snr_grid_db": [5.0, 10.0]}"#,
    );
    run_ok(&[
        "snr-sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    let csv = fs::read_to_string(dir.path().join("out/snr_sweep.csv")).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("5,adaptive")));
    assert!(csv.lines().any(|l| l.starts_with("10,adaptive")));
    let summary: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("out/snr_sweep_summary.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(summary.as_array().unwrap().len(), 2);
}
