mod common;

use std::path::{Path, PathBuf};
use std::process::Command;

use headway_core::whatif::TerminalPlan;
use headway_core::Direction;
use headway_lab::checkpoint::load_checkpoint;
use headway_lab::cli::run;
use headway_lab::formats::{read_grids, read_history, read_metrics, read_trajectories};

fn lab(args: &[&str]) -> i32 {
    let mut argv = vec!["headway-lab"];
    argv.extend_from_slice(args);
    run(argv)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
}

/// simulate → preprocess → train (2 epochs) under one temp dir.
fn trained() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let mut cfg = common::tiny_config();
    cfg.train.epochs = 5;
    let config = common::write_config(&root, &cfg);
    let (sim, data, model) = (root.join("sim"), root.join("data"), root.join("model"));
    assert_eq!(lab(&["simulate", "--config", s(&config), "--out", s(&sim)]), 0);
    let traj = sim.join("trajectories.csv");
    assert_eq!(lab(&["preprocess", "--config", s(&config), "--input", s(&traj), "--out", s(&data)]), 0);
    assert_eq!(lab(&["train", "--config", s(&config), "--data", s(&data), "--epochs", "2", "--out", s(&model)]), 0);
    Fixture { _dir: dir, root, config }
}

impl Fixture {
    fn ck(&self) -> String {
        self.root.join("model/checkpoint.bin").to_string_lossy().into_owned()
    }
    fn data(&self) -> String {
        self.root.join("data").to_string_lossy().into_owned()
    }
}

#[test]
fn simulate_is_deterministic_and_writes_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let config = common::write_config(dir.path(), &common::tiny_config());
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    for out in [&a, &b] {
        assert_eq!(lab(&["simulate", "--config", s(&config), "--out", s(out)]), 0);
    }
    assert_eq!(lab(&["simulate", "--config", s(&config), "--seed", "43", "--out", s(&c)]), 0);
    let bytes = |d: &Path| std::fs::read(d.join("trajectories.csv")).unwrap();
    assert_eq!(bytes(&a), bytes(&b));
    assert_ne!(bytes(&a), bytes(&c));
    assert_eq!(read_trajectories(&a.join("trajectories.csv")).unwrap().len(), 5);

    let (d1, d2) = (dir.path().join("d1"), dir.path().join("d2"));
    for out in [&d1, &d2] {
        assert_eq!(lab(&["simulate", "--replications", "1", "--seed", "7", "--out", s(out)]), 0);
    }
    assert_eq!(bytes(&d1), bytes(&d2));

    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(a.join("simulate.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "simulate");
    assert_eq!(manifest["seed"], 42);
    assert_eq!(manifest["config"]["replications"], 5);
    assert!(manifest["outputs"][0].as_str().unwrap().ends_with("trajectories.csv"));
    assert!(manifest["tool_version"].is_string());
}

#[test]
fn preprocess_emits_grids_and_samples() {
    let dir = tempfile::tempdir().unwrap();
    let config = common::write_config(dir.path(), &common::tiny_config());
    let (sim, data) = (dir.path().join("sim"), dir.path().join("data"));
    assert_eq!(lab(&["simulate", "--config", s(&config), "--out", s(&sim)]), 0);
    let traj = sim.join("trajectories.csv");
    assert_eq!(
        lab(&["preprocess", "--config", s(&config), "--input", s(&traj), "--emit-samples", "--out", s(&data)]),
        0
    );
    let (sidecar, grids) = read_grids(&data).unwrap();
    assert_eq!(grids.len(), 5);
    assert_eq!(sidecar.validation_replications.len(), 1);
    assert!(grids.values().all(|g| g.is_imputed() && !g.normalized));
    assert!(data.join("samples.jsonl").exists() && data.join("samples.f32").exists());
    assert!(data.join("preprocess.manifest.json").exists());
}

#[test]
fn train_evaluate_predict_whatif_scatter() {
    let fx = trained();
    let (ck, data) = (fx.ck(), fx.data());
    let (header, loaded) = load_checkpoint(Path::new(&ck)).unwrap();
    assert_eq!(header.history.epochs_run(), 2);
    assert_eq!(read_history(&fx.root.join("model/history.csv")).unwrap().len(), 2);
    assert_eq!(loaded.model.params.dims.n_distance_bins, 8);

    let eval = fx.root.join("eval");
    assert_eq!(lab(&["evaluate", "--checkpoint", &ck, "--data", &data, "--horizons", "15,30,45,60", "--baseline", "--out", s(&eval)]), 0);
    let rows = read_metrics(&eval.join("metrics.csv")).unwrap();
    assert_eq!(rows.len(), 8);
    assert!(rows.iter().all(|r| r.rmse_s.is_finite() && r.n > 0));
    assert_eq!(read_metrics(&eval.join("persistence_metrics.csv")).unwrap().len(), 8);

    let pred = fx.root.join("pred");
    let args = ["predict", "--checkpoint", &ck, "--data", &data, "--replication", "1", "--anchor", "20"];
    assert_eq!(lab(&[&args[..], &["--rounds", "2", "--out", s(&pred)]].concat()), 0);
    for d in ["NB", "SB"] {
        let text = std::fs::read_to_string(pred.join(format!("heatmap_{d}.csv"))).unwrap();
        assert!(text.starts_with("time_bin,distance_bin,headway_s,observed,source"));
        // 6 history + 6 actual + 6 predicted bins, 8 cells each.
        assert_eq!(text.lines().count(), 1 + 3 * 6 * 8);
        assert_eq!(text.lines().filter(|l| l.ends_with(",predicted")).count(), 6 * 8);
    }

    let plans = fx.root.join("plans");
    std::fs::create_dir_all(&plans).unwrap();
    let write_plan = |name: &str, h: f64| {
        let p = plans.join(name);
        let plan = TerminalPlan { direction: Direction::Nb, label: name.into(), headways_s: vec![h; 6] };
        std::fs::write(&p, serde_json::to_vec(&plan).unwrap()).unwrap();
        p.to_string_lossy().into_owned()
    };
    let (even, wide) = (write_plan("even.json", 300.0), write_plan("wide.json", 480.0));
    let wi = fx.root.join("whatif");
    let args = ["whatif", "--checkpoint", &ck, "--data", &data, "--replication", "1", "--anchor", "20"];
    assert_eq!(lab(&[&args[..], &["--plan", &even, "--plan", &wide, "--out", s(&wi)]].concat()), 0);
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(wi.join("whatif_report.json")).unwrap()).unwrap();
    let base = &report["plans"][0];
    assert!(base["cv_delta"].as_array().unwrap().iter().flat_map(|r| r.as_array().unwrap()).all(|v| v == 0.0));
    assert_eq!(report["plans"].as_array().unwrap().len(), 2);
    assert!(wi.join("whatif_plan1_SB.csv").exists());

    let low = write_plan("low.json", 60.0);
    assert_eq!(lab(&[&args[..], &["--plan", &low, "--out", s(&wi)]].concat()), 1);

    let sc = fx.root.join("scatter");
    assert_eq!(lab(&["export-scatter", "--checkpoint", &ck, "--data", &data, "--distance-bin", "3", "--out", s(&sc)]), 0);
    let text = std::fs::read_to_string(sc.join("scatter_bin3.csv")).unwrap();
    assert!(text.lines().count() > 1);
}

#[test]
fn mismatched_data_is_refused() {
    let fx = trained();
    // Preprocess the same trajectories under another seed: different validation split and scaler.
    let other = fx.root.join("other");
    let traj = fx.root.join("sim/trajectories.csv");
    assert_eq!(
        lab(&["preprocess", "--config", s(&fx.config), "--seed", "9", "--input", s(&traj), "--out", s(&other)]),
        0
    );
    let (a, _) = read_grids(&fx.root.join("data")).unwrap();
    let (b, _) = read_grids(&other).unwrap();
    if a.scaler != b.scaler {
        let out = fx.root.join("eval");
        assert_eq!(lab(&["evaluate", "--checkpoint", &fx.ck(), "--data", s(&other), "--out", s(&out)]), 1);
    }
    let out = fx.root.join("bad");
    assert_eq!(lab(&["evaluate", "--checkpoint", s(&traj), "--data", &fx.data(), "--out", s(&out)]), 1);
}

#[test]
fn binary_reports_usage_and_failures_through_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_headway-lab");
    let status = Command::new(bin).arg("frobnicate").output().unwrap();
    assert_eq!(status.status.code(), Some(2));
    let out = Command::new(bin).args(["--help"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("whatif"));
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(bin)
        .args(["preprocess", "--input", "/nonexistent.csv", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}
