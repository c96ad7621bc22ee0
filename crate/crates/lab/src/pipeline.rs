//! Simulate → grid → window → train → evaluate, shared by the CLI, the
//! service and the acceptance suite.

use std::collections::BTreeMap;

use anyhow::{ensure, Context};
use headway_core::grid::{fit_scaler, normalize, preprocess_log, HeadwayGrid, PreprocessReport};
use headway_core::predict::TrainedModel;
use headway_core::sim::{generate_dataset, TrajectoryLog};
use headway_core::train::{train_from, EpochReport, TrainConfig, TrainHistory};
use headway_core::window::{extract_samples, held_out_replications, Sample, SampleRole, SampleSet, WindowSpec};
use headway_core::{Tensor, N_DIRECTIONS};
use serde::Serialize;

use crate::config::{LabConfig, Stage};
use crate::formats::{GridSidecar, GRID_FORMAT_VERSION};

pub fn simulate(cfg: &LabConfig) -> anyhow::Result<Vec<TrajectoryLog>> {
    Ok(generate_dataset(&cfg.line, cfg.replications, cfg.seed, &cfg.dispatch)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct PreprocessSummary {
    pub replication_id: u32,
    pub accepted_events: usize,
    pub rejected_events: usize,
    pub outside_window: usize,
    pub imputed_cells: usize,
    pub empty_columns: usize,
}

impl PreprocessSummary {
    fn new(replication_id: u32, r: &PreprocessReport) -> Self {
        PreprocessSummary {
            replication_id,
            accepted_events: r.raster.accepted,
            rejected_events: r.raster.rejected.len(),
            outside_window: r.outside_window,
            imputed_cells: r.imputation.filled_cells,
            empty_columns: r.imputation.empty_columns.len(),
        }
    }
}

/// Grids in seconds plus the sidecar describing them.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub sidecar: GridSidecar,
    pub grids: BTreeMap<u32, HeadwayGrid>,
}

/// Builds grids, holds out validation replications and fits the scaler on
/// the remaining (training) replications only.
pub fn preprocess(logs: &[TrajectoryLog], cfg: &LabConfig) -> anyhow::Result<(PreparedData, Vec<PreprocessSummary>)> {
    ensure!(!logs.is_empty(), "no trajectory logs to preprocess");
    let mut grids = BTreeMap::new();
    let mut summaries = Vec::new();
    for log in logs {
        let (grid, report) =
            preprocess_log(log, &cfg.grid).with_context(|| format!("replication {}", log.replication_id))?;
        summaries.push(PreprocessSummary::new(log.replication_id, &report));
        ensure!(grids.insert(log.replication_id, grid).is_none(), "replication {} appears twice", log.replication_id);
    }
    let ids: Vec<u32> = grids.keys().copied().collect();
    let validation = if ids.len() >= 2 {
        held_out_replications(&ids, cfg.split.validation_fraction, cfg.stage_seed(Stage::Split))
    } else {
        Vec::new()
    };
    let fit_on: Vec<HeadwayGrid> =
        grids.iter().filter(|(id, _)| validation.binary_search(id).is_err()).map(|(_, g)| g.clone()).collect();
    let scaler = fit_scaler(&fit_on)?;
    let sidecar = GridSidecar {
        format_version: GRID_FORMAT_VERSION,
        spec: cfg.grid.clone(),
        scaler,
        replications: ids,
        validation_replications: validation,
    };
    Ok((PreparedData { sidecar, grids }, summaries))
}

impl PreparedData {
    pub fn is_validation(&self, id: u32) -> bool {
        self.sidecar.validation_replications.binary_search(&id).is_ok()
    }

    pub fn normalized(&self, id: u32) -> anyhow::Result<HeadwayGrid> {
        let g = self.grids.get(&id).with_context(|| format!("unknown replication {id}"))?;
        Ok(normalize(g, &self.sidecar.scaler)?)
    }

    /// Samples of the chosen replications, keeping anchors `L, L + stride, ...`.
    pub fn samples(&self, window: &WindowSpec, ids: &[u32], stride: usize) -> anyhow::Result<Vec<Sample>> {
        let mut out = Vec::new();
        for &id in ids {
            let (samples, short) = extract_samples(&self.normalized(id)?, window, id)?;
            if let Some(s) = short {
                log::warn!("replication {} has {} time bins, windows need {}", s.replication_id, s.n_time_bins, s.needed);
            }
            out.extend(samples.into_iter().filter(|s| (s.anchor_time_bin - window.lookback) % stride == 0));
        }
        Ok(out)
    }

    pub fn training_ids(&self) -> Vec<u32> {
        self.sidecar.replications.iter().copied().filter(|&id| !self.is_validation(id)).collect()
    }

    /// Train and validation sets; the stride thins training anchors only.
    pub fn sample_sets(&self, window: &WindowSpec, stride: usize) -> anyhow::Result<(SampleSet, SampleSet)> {
        let train = self.samples(window, &self.training_ids(), stride)?;
        let val = self.samples(window, &self.sidecar.validation_replications, 1)?;
        Ok((SampleSet { samples: train, role: SampleRole::Train }, SampleSet { samples: val, role: SampleRole::Validation }))
    }

    /// Windows whose ground truth covers `horizon_bins` future bins.
    pub fn evaluation_samples(&self, window: &WindowSpec, ids: &[u32], horizon_bins: usize) -> anyhow::Result<Vec<Sample>> {
        let long = WindowSpec { horizon: horizon_bins, ..window.clone() };
        self.samples(&long, ids, 1)
    }
}

/// Trains on the prepared data with seeds derived from the config.
pub fn train_model(
    data: &PreparedData,
    cfg: &LabConfig,
    observer: &mut dyn FnMut(&EpochReport) -> bool,
) -> anyhow::Result<(TrainedModel, TrainHistory)> {
    let (train, val) = data.sample_sets(&cfg.window, cfg.split.anchor_stride)?;
    ensure!(!val.samples.is_empty(), "no validation samples; need at least two replications");
    log::info!("training on {} samples, validating on {}", train.samples.len(), val.samples.len());
    let params = headway_core::convlstm::init_params(&cfg.model, cfg.stage_seed(Stage::Init))?;
    let tc = TrainConfig { seed: cfg.stage_seed(Stage::Shuffle), ..cfg.train.clone() };
    let (params, history) = train_from(params, &train, &val, &tc, observer)?;
    let model = TrainedModel {
        params,
        scaler: data.sidecar.scaler,
        window: cfg.window.clone(),
        delta_t_s: data.sidecar.spec.delta_t_s,
    };
    Ok((model, history))
}

/// The normalized look-back window ending before `anchor`, plus the actual
/// normalized future and terminal series when the grid extends far enough.
#[derive(Debug, Clone)]
pub struct WindowAt {
    pub x: Tensor<f32>,
    pub future: Option<Tensor<f32>>,
    pub terminal: Option<Tensor<f32>>,
}

pub fn window_at(grid: &HeadwayGrid, window: &WindowSpec, anchor: usize, future_bins: usize) -> anyhow::Result<WindowAt> {
    ensure!(grid.normalized, "window_at needs a normalized grid");
    let n_t = grid.n_time_bins();
    let l = window.lookback;
    ensure!(anchor >= l && anchor <= n_t, "anchor {anchor} outside {l}..={n_t}");
    let n_d = grid.spec.n_distance_bins;
    let frame = n_d * N_DIRECTIONS;
    let slice = |from: usize, to: usize| grid.values[from * frame..to * frame].iter().map(|&v| v as f32).collect::<Vec<_>>();
    let x = Tensor::from_vec(&[l, n_d, N_DIRECTIONS, 1], slice(anchor - l, anchor))?;
    if anchor + future_bins > n_t {
        return Ok(WindowAt { x, future: None, terminal: None });
    }
    let future = Tensor::from_vec(&[future_bins, n_d, N_DIRECTIONS, 1], slice(anchor, anchor + future_bins))?;
    let bins = window.terminal_bins();
    let mut t = Vec::with_capacity(future_bins * N_DIRECTIONS);
    for step in 0..future_bins {
        for (k, &b) in bins.iter().enumerate() {
            t.push(future.get(&[step, b, k, 0]));
        }
    }
    let terminal = Tensor::from_vec(&[future_bins, N_DIRECTIONS, 1], t)?;
    Ok(WindowAt { x, future: Some(future), terminal: Some(terminal) })
}
