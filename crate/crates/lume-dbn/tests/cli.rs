//! End-to-end runs of the binary: simulate, learn, evaluate, grid, report.

use std::fs;
use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lume-dbn"))
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let cfg = serde_json::json!({
        "mode": "grid",
        "generator": {
            "k": 3, "fan_in_max": 3, "coef_low": 0.2, "coef_high": 0.8,
            "noise_variance": 1.0, "t_len": 30, "n_series": 1,
            "seed": 5, "random_signs": false
        },
        "priors": {
            "a_sigma": 0.01, "b_sigma": 0.01, "a_delta": 0.01, "b_delta": 0.01,
            "lambda": 1.0, "mu": [[0.0,0.0,0.0,0.0],[0.0,0.0,0.0,0.0],[0.0,0.0,0.0,0.0]],
            "fan_in_max": 3
        },
        "mcmc": {
            "epochs": 80, "missing_update_interval": 10, "burn_in": 30,
            "thinning": 2, "chains": 2, "seed": 5, "record_missing_trace": true
        },
        "missingness_rates": [0.2],
        "methods": ["lume", "temporal-mice"],
        "replicates": 1,
        "output_dir": dir.join("out")
    });
    let path = dir.join("cfg.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn run_ok(args: &[&str]) {
    let out = bin().args(args).output().unwrap();
    assert!(
        out.status.success(),
        "command {args:?} failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn simulate_learn_evaluate_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    let out_dir = dir.path().join("out");
    let out = out_dir.to_str().unwrap();

    run_ok(&["simulate", "--config", cfg, "--output-dir", out]);
    for f in ["data.csv", "data_complete.csv", "truth_adjacency.csv", "truth_params.json"] {
        assert!(out_dir.join(f).exists(), "{f} missing after simulate");
    }

    run_ok(&["learn", "--config", cfg, "--output-dir", out]);
    for f in ["inclusion.csv", "network.csv", "diagnostics.csv", "imputed.csv"] {
        assert!(out_dir.join(f).exists(), "{f} missing after learn");
    }

    run_ok(&[
        "evaluate",
        "--config",
        cfg,
        "--output-dir",
        out,
        "--inclusion",
        out_dir.join("inclusion.csv").to_str().unwrap(),
        "--truth",
        out_dir.join("truth_adjacency.csv").to_str().unwrap(),
    ]);
    let eval: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("evaluation.json")).unwrap())
            .unwrap();
    let auc = eval["auc_pr"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&auc), "auc_pr out of range: {auc}");
}

#[test]
fn grid_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    let out_dir = dir.path().join("out");
    let out = out_dir.to_str().unwrap();

    run_ok(&["grid", "--config", cfg, "--output-dir", out, "--parallelism", "2"]);
    assert!(out_dir.join("summary.csv").exists());
    assert!(out_dir.join("manifest.json").exists());

    run_ok(&["report", "--config", cfg, "--output-dir", out]);
    assert!(out_dir.join("report.csv").exists());
    assert!(out_dir.join("paired_differences.csv").exists());
    let paired = fs::read_to_string(out_dir.join("paired_differences.csv")).unwrap();
    assert!(paired.lines().count() >= 2, "paired table should have a data row");
}

#[test]
fn baseline_subcommand_requires_baseline_mode() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write_config(dir.path());
    let out_dir = dir.path().join("out");
    run_ok(&[
        "simulate",
        "--config",
        cfg_path.to_str().unwrap(),
        "--output-dir",
        out_dir.to_str().unwrap(),
    ]);

    // Grid mode config: baseline must refuse.
    let out = bin()
        .args([
            "baseline",
            "--config",
            cfg_path.to_str().unwrap(),
            "--output-dir",
            out_dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());

    // Flip the mode and it runs.
    let mut cfg: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&cfg_path).unwrap()).unwrap();
    cfg["mode"] = "baseline-temporal-mice".into();
    fs::write(&cfg_path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    run_ok(&[
        "baseline",
        "--config",
        cfg_path.to_str().unwrap(),
        "--output-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out_dir.join("imputed.csv").exists());
    assert!(out_dir.join("inclusion.csv").exists());
}
