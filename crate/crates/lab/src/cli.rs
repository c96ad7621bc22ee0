//! `headway-lab` command line.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Context};
use clap::{Args, Parser, Subcommand};
use headway_core::grid::HeadwayGrid;
use headway_core::predict::{evaluate, evaluate_persistence, predict_recursive, station_scatter, TrainedModel};
use headway_core::whatif::{compare_plans, persistence_terminal, TerminalPlan};
use headway_core::{Direction, Tensor};
use serde::Serialize;

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::config::LabConfig;
use crate::formats::{
    heatmap_csv, history_csv, metrics_csv, read_grids, read_json, read_trajectories, sample_files, scatter_csv,
    trajectory_csv, write_atomic, write_grids, write_json, HeatmapRow, HeatmapSource,
};
use crate::pipeline::{preprocess, simulate, train_model, window_at, PreparedData};

#[derive(Debug, Parser)]
#[command(name = "headway-lab", version, about = "Train and query a ConvLSTM headway propagation model")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Experiment config (JSON); flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ModelInputs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Directory written by `preprocess`.
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate replications and write `trajectories.csv`.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        replications: Option<usize>,
    },
    /// Turn trajectories into grid files and fit the scaler.
    Preprocess {
        #[command(flatten)]
        common: Common,
        /// Trajectory CSV.
        #[arg(long)]
        input: PathBuf,
        /// Also write the sample manifest and payload.
        #[arg(long)]
        emit_samples: bool,
    },
    /// Train a model on preprocessed grids.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// RMSE / R² per direction and horizon on the validation replications.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: ModelInputs,
        /// Comma-separated minutes, e.g. 15,30,45,60.
        #[arg(long, value_delimiter = ',')]
        horizons: Option<Vec<u32>>,
        /// Also score the persistence baseline.
        #[arg(long)]
        baseline: bool,
    },
    /// Predict from one window and write heatmap CSVs.
    Predict {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: ModelInputs,
        #[arg(long)]
        replication: u32,
        #[arg(long)]
        anchor: usize,
        #[arg(long, default_value_t = 1)]
        rounds: usize,
        /// Terminal plan JSON overriding one direction's terminal series.
        #[arg(long)]
        plan: Vec<PathBuf>,
    },
    /// Compare terminal plans on one window.
    Whatif {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: ModelInputs,
        #[arg(long)]
        replication: u32,
        #[arg(long)]
        anchor: usize,
        /// Plan JSON files, in order.
        #[arg(long, required = true)]
        plan: Vec<PathBuf>,
        #[arg(long, default_value_t = 0)]
        baseline: usize,
    },
    /// Serve predictions over HTTP.
    Serve {
        #[command(flatten)]
        inputs: ModelInputs,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Actual/predicted pairs at one distance bin.
    ExportScatter {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: ModelInputs,
        #[arg(long)]
        distance_bin: usize,
        #[arg(long, value_delimiter = ',')]
        horizons: Option<Vec<u32>>,
    },
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub tool_version: String,
    pub seed: u64,
    pub config: LabConfig,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub duration_s: f64,
    #[serde(skip_serializing_if = "serde_json::Value::is_null")]
    pub details: serde_json::Value,
}

struct Outcome {
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    details: serde_json::Value,
}

/// Entry point; returns the process exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let argv: Vec<std::ffi::OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let argv: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(cli.command, argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn resolve(common: &Common) -> anyhow::Result<LabConfig> {
    let mut cfg = LabConfig::load_or_default(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn execute(command: Command, argv: Vec<String>) -> anyhow::Result<()> {
    let started = Instant::now();
    let (name, common, mut cfg) = match &command {
        Command::Serve { inputs, port, config } => {
            let cfg = LabConfig::load_or_default(config.as_deref())?;
            let session = crate::service::Session::load(&inputs.checkpoint, &inputs.data, cfg.plan_rules)?;
            return crate::service::serve(session, *port);
        }
        Command::Simulate { common, .. } => ("simulate", common.clone(), resolve(common)?),
        Command::Preprocess { common, .. } => ("preprocess", common.clone(), resolve(common)?),
        Command::Train { common, .. } => ("train", common.clone(), resolve(common)?),
        Command::Evaluate { common, .. } => ("evaluate", common.clone(), resolve(common)?),
        Command::Predict { common, .. } => ("predict", common.clone(), resolve(common)?),
        Command::Whatif { common, .. } => ("whatif", common.clone(), resolve(common)?),
        Command::ExportScatter { common, .. } => ("export-scatter", common.clone(), resolve(common)?),
    };
    let out = common.out.clone();
    match &command {
        Command::Simulate { replications: Some(n), .. } => cfg.replications = *n,
        Command::Train { epochs: Some(e), .. } => cfg.train.epochs = *e,
        Command::Evaluate { horizons: Some(h), .. } | Command::ExportScatter { horizons: Some(h), .. } => {
            cfg.horizons_min = h.clone()
        }
        _ => {}
    }
    cfg.validate()?;
    log::info!("{name}: writing to {}", out.display());
    let outcome = match command {
        Command::Simulate { .. } => cmd_simulate(&cfg, &out)?,
        Command::Preprocess { input, emit_samples, .. } => cmd_preprocess(&cfg, &input, emit_samples, &out)?,
        Command::Train { data, .. } => cmd_train(&cfg, &data, &out)?,
        Command::Evaluate { inputs, baseline, .. } => cmd_evaluate(&cfg, &inputs, baseline, &out)?,
        Command::Predict { inputs, replication, anchor, rounds, plan, .. } => {
            cmd_predict(&cfg, &inputs, replication, anchor, rounds, &plan, &out)?
        }
        Command::Whatif { inputs, replication, anchor, plan, baseline, .. } => {
            cmd_whatif(&cfg, &inputs, replication, anchor, &plan, baseline, &out)?
        }
        Command::ExportScatter { inputs, distance_bin, .. } => cmd_scatter(&cfg, &inputs, distance_bin, &out)?,
        Command::Serve { .. } => unreachable!("handled above"),
    };
    let manifest = RunManifest {
        command: name.to_string(),
        argv,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        config: cfg,
        inputs: outcome.inputs,
        outputs: outcome.outputs,
        duration_s: started.elapsed().as_secs_f64(),
        details: outcome.details,
    };
    write_json(&out.join(format!("{name}.manifest.json")), &manifest)
}

fn cmd_simulate(cfg: &LabConfig, out: &Path) -> anyhow::Result<Outcome> {
    let logs = simulate(cfg)?;
    let path = out.join("trajectories.csv");
    write_atomic(&path, &trajectory_csv(&logs)?)?;
    let events: usize = logs.iter().map(|l| l.events.len()).sum();
    log::info!("simulated {} replications, {events} events", logs.len());
    Ok(Outcome { inputs: vec![], outputs: vec![path], details: serde_json::json!({ "events": events }) })
}

fn cmd_preprocess(cfg: &LabConfig, input: &Path, emit_samples: bool, out: &Path) -> anyhow::Result<Outcome> {
    let logs = read_trajectories(input)?;
    let (data, summaries) = preprocess(&logs, cfg)?;
    let mut outputs = write_grids(out, &data.sidecar, &data.grids)?;
    if emit_samples {
        let ids = data.sidecar.replications.clone();
        let samples = data.samples(&cfg.window, &ids, 1)?;
        let (manifest, payload) = sample_files(&samples)?;
        for (name, bytes) in [("samples.jsonl", manifest), ("samples.f32", payload)] {
            let p = out.join(name);
            write_atomic(&p, &bytes)?;
            outputs.push(p);
        }
    }
    Ok(Outcome {
        inputs: vec![input.to_path_buf()],
        outputs,
        details: serde_json::json!({ "scaler": data.sidecar.scaler, "replications": summaries }),
    })
}

fn load_data(dir: &Path) -> anyhow::Result<PreparedData> {
    let (sidecar, grids) = read_grids(dir)?;
    Ok(PreparedData { sidecar, grids })
}

fn cmd_train(cfg: &LabConfig, data_dir: &Path, out: &Path) -> anyhow::Result<Outcome> {
    let data = load_data(data_dir)?;
    ensure!(
        data.sidecar.spec == cfg.grid,
        "grid spec in {} differs from the config's grid section",
        data_dir.display()
    );
    let (model, history) = train_model(&data, cfg, &mut |r| {
        log::info!("epoch {:>3}  train {:.6}  val {:.6}{}", r.epoch, r.train_loss, r.val_loss, if r.improved { " *" } else { "" });
        true
    })?;
    let ck = Checkpoint {
        model,
        grid: data.sidecar.spec.clone(),
        seed: cfg.seed,
        history: history.clone(),
        validation_replications: data.sidecar.validation_replications.clone(),
    };
    let ck_path = out.join("checkpoint.bin");
    save_checkpoint(&ck_path, &ck)?;
    let hist_path = out.join("history.csv");
    write_atomic(&hist_path, &history_csv(&history)?)?;
    Ok(Outcome {
        inputs: vec![data_dir.to_path_buf()],
        outputs: vec![ck_path, hist_path],
        details: serde_json::json!({ "best_epoch": history.best_epoch, "stopped_early": history.stopped_early }),
    })
}

/// Checkpoint plus the grids it was trained against.
pub fn load_model_and_data(inputs: &ModelInputs) -> anyhow::Result<(Checkpoint, PreparedData)> {
    let (_, ck) = load_checkpoint(&inputs.checkpoint).with_context(|| format!("loading {}", inputs.checkpoint.display()))?;
    let data = load_data(&inputs.data)?;
    if data.sidecar.scaler.digest() != ck.model.scaler.digest() {
        bail!("{} was preprocessed with a different scaler than the checkpoint", inputs.data.display());
    }
    ensure!(data.sidecar.spec == ck.grid, "grid spec of {} differs from the checkpoint's", inputs.data.display());
    Ok((ck, data))
}

fn eval_ids(ck: &Checkpoint, data: &PreparedData) -> Vec<u32> {
    if ck.validation_replications.is_empty() {
        data.sidecar.replications.clone()
    } else {
        ck.validation_replications.clone()
    }
}

fn max_horizon_bins(model: &TrainedModel, horizons: &[u32]) -> usize {
    let max = horizons.iter().copied().max().unwrap_or(0) as f64;
    (max * 60.0 / model.delta_t_s).round() as usize
}

fn cmd_evaluate(cfg: &LabConfig, inputs: &ModelInputs, baseline: bool, out: &Path) -> anyhow::Result<Outcome> {
    let (ck, data) = load_model_and_data(inputs)?;
    let m = &ck.model;
    let samples = data.evaluation_samples(&m.window, &eval_ids(&ck, &data), max_horizon_bins(m, &cfg.horizons_min))?;
    let report = evaluate(m, &m.scaler, &samples, &cfg.horizons_min)?;
    let mut outputs = vec![out.join("metrics.csv")];
    write_atomic(&outputs[0], &metrics_csv(&report)?)?;
    for r in &report.rows {
        log::info!("{} {:>2} min  rmse {:7.2} s  r2 {:.4}  n {}", r.direction, r.horizon_min, r.rmse_s, r.r2, r.n);
    }
    if baseline {
        let p = out.join("persistence_metrics.csv");
        write_atomic(&p, &metrics_csv(&evaluate_persistence(m, &samples, &cfg.horizons_min)?)?)?;
        outputs.push(p);
    }
    Ok(Outcome {
        inputs: vec![inputs.checkpoint.clone(), inputs.data.clone()],
        outputs,
        details: serde_json::json!({ "samples": samples.len() }),
    })
}

/// History, actual and predicted rows for one direction around `anchor`.
pub fn heatmap_rows(
    grid_s: &HeadwayGrid,
    lookback: usize,
    anchor: usize,
    prediction_s: &Tensor<f32>,
    direction: Direction,
) -> Vec<HeatmapRow> {
    let k = direction.index();
    let n_d = grid_s.spec.n_distance_bins;
    let bins = prediction_s.shape()[0];
    let mut rows = Vec::new();
    let mut push = |t: usize, j: usize, h: f64, observed: bool, source| {
        rows.push(HeatmapRow { time_bin: t, distance_bin: j, headway_s: h, observed, source })
    };
    for t in anchor - lookback..anchor {
        for j in 0..n_d {
            push(t, j, grid_s.get(t, j, k), grid_s.is_observed(t, j, k), HeatmapSource::History);
        }
    }
    for t in anchor..(anchor + bins).min(grid_s.n_time_bins()) {
        for j in 0..n_d {
            push(t, j, grid_s.get(t, j, k), grid_s.is_observed(t, j, k), HeatmapSource::Actual);
        }
    }
    for s in 0..bins {
        for j in 0..n_d {
            push(anchor + s, j, prediction_s.get(&[s, j, k, 0]) as f64, false, HeatmapSource::Predicted);
        }
    }
    rows
}

fn read_plans(paths: &[PathBuf]) -> anyhow::Result<Vec<TerminalPlan>> {
    paths.iter().map(|p| read_json::<TerminalPlan>(p)).collect()
}

/// Actual terminal series when the grid covers the horizon, else the last
/// observed terminal headway repeated.
fn base_terminal(model: &TrainedModel, grid_n: &HeadwayGrid, anchor: usize, bins: usize) -> anyhow::Result<Tensor<f32>> {
    let w = window_at(grid_n, &model.window, anchor, bins)?;
    match w.terminal {
        Some(t) => Ok(t),
        None => Ok(persistence_terminal(model, &w.x, bins)?),
    }
}

fn cmd_predict(
    cfg: &LabConfig,
    inputs: &ModelInputs,
    replication: u32,
    anchor: usize,
    rounds: usize,
    plans: &[PathBuf],
    out: &Path,
) -> anyhow::Result<Outcome> {
    let (ck, data) = load_model_and_data(inputs)?;
    let m = &ck.model;
    let grid_n = data.normalized(replication)?;
    let bins = rounds * m.horizon();
    let w = window_at(&grid_n, &m.window, anchor, bins)?;
    let mut terminal = base_terminal(m, &grid_n, anchor, bins)?;
    for plan in read_plans(plans)? {
        cfg.plan_rules.validate(&plan)?;
        ensure!(plan.headways_s.len() >= bins, "plan '{}' covers {} bins, {bins} needed", plan.label, plan.headways_s.len());
        for (s, &h) in plan.headways_s.iter().take(bins).enumerate() {
            terminal.set(&[s, plan.direction.index(), 0], m.scaler.normalize_value(h) as f32);
        }
    }
    let pred = predict_recursive(m, &m.scaler, &w.x, &terminal, rounds, anchor)?;
    let grid_s = &data.grids[&replication];
    let mut outputs = Vec::new();
    for d in Direction::ALL {
        let p = out.join(format!("heatmap_{d}.csv"));
        write_atomic(&p, &heatmap_csv(&heatmap_rows(grid_s, m.lookback(), anchor, &pred.y_hat, d))?)?;
        outputs.push(p);
    }
    let mut inputs_used = vec![inputs.checkpoint.clone(), inputs.data.clone()];
    inputs_used.extend(plans.iter().cloned());
    Ok(Outcome {
        inputs: inputs_used,
        outputs,
        details: serde_json::json!({ "replication": replication, "anchor": anchor, "horizon_minutes": pred.horizon_minutes }),
    })
}

#[derive(Debug, Serialize)]
struct WhatifPlanReport {
    plan: TerminalPlan,
    heatmaps: Vec<PathBuf>,
    line_cv: [f64; 2],
    cv: Vec<[f64; 2]>,
    mean_s: Vec<[f64; 2]>,
    cv_delta: Vec<[f64; 2]>,
    mean_delta_s: Vec<[f64; 2]>,
}

fn cmd_whatif(
    cfg: &LabConfig,
    inputs: &ModelInputs,
    replication: u32,
    anchor: usize,
    plan_paths: &[PathBuf],
    baseline: usize,
    out: &Path,
) -> anyhow::Result<Outcome> {
    let (ck, data) = load_model_and_data(inputs)?;
    let m = &ck.model;
    let plans = read_plans(plan_paths)?;
    let bins = plans.first().map(|p| p.headways_s.len()).unwrap_or(0);
    let grid_n = data.normalized(replication)?;
    let w = window_at(&grid_n, &m.window, anchor, bins)?;
    let base = base_terminal(m, &grid_n, anchor, bins)?;
    let report = compare_plans(m, &m.scaler, &cfg.plan_rules, &w.x, &base, &plans, baseline)?;
    let grid_s = &data.grids[&replication];
    let mut outputs = Vec::new();
    let mut plan_reports = Vec::new();
    for (i, o) in report.outcomes.iter().enumerate() {
        let mut heatmaps = Vec::new();
        for d in Direction::ALL {
            let p = out.join(format!("whatif_plan{i}_{d}.csv"));
            write_atomic(&p, &heatmap_csv(&heatmap_rows(grid_s, m.lookback(), anchor, &o.prediction_s, d))?)?;
            heatmaps.push(p);
        }
        outputs.extend(heatmaps.iter().cloned());
        plan_reports.push(WhatifPlanReport {
            plan: o.plan.clone(),
            heatmaps,
            line_cv: o.line_cv,
            cv: o.cv.clone(),
            mean_s: o.mean_s.clone(),
            cv_delta: o.cv_delta.clone(),
            mean_delta_s: o.mean_delta_s.clone(),
        });
    }
    let report_path = out.join("whatif_report.json");
    write_json(
        &report_path,
        &serde_json::json!({ "replication": replication, "anchor": anchor, "baseline_index": baseline, "plans": plan_reports }),
    )?;
    outputs.push(report_path);
    let mut inputs_used = vec![inputs.checkpoint.clone(), inputs.data.clone()];
    inputs_used.extend(plan_paths.iter().cloned());
    Ok(Outcome { inputs: inputs_used, outputs, details: serde_json::Value::Null })
}

fn cmd_scatter(cfg: &LabConfig, inputs: &ModelInputs, distance_bin: usize, out: &Path) -> anyhow::Result<Outcome> {
    let (ck, data) = load_model_and_data(inputs)?;
    let m = &ck.model;
    let samples = data.evaluation_samples(&m.window, &eval_ids(&ck, &data), max_horizon_bins(m, &cfg.horizons_min))?;
    let sc = station_scatter(m, &m.scaler, &samples, distance_bin, &cfg.horizons_min)?;
    let p = out.join(format!("scatter_bin{distance_bin}.csv"));
    write_atomic(&p, &scatter_csv(&sc.points)?)?;
    Ok(Outcome {
        inputs: vec![inputs.checkpoint.clone(), inputs.data.clone()],
        outputs: vec![p],
        details: serde_json::to_value(&sc.summary)?,
    })
}
