//! Experiment configuration: one JSON document, every section optional.

use std::path::Path;

use anyhow::Context;
use headway_core::convlstm::ModelDims;
use headway_core::grid::GridSpec;
use headway_core::sim::{DispatchPlan, LineConfig};
use headway_core::train::TrainConfig;
use headway_core::whatif::PlanRules;
use headway_core::window::WindowSpec;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabConfig {
    pub seed: u64,
    pub replications: usize,
    pub line: LineConfig,
    pub dispatch: DispatchPlan,
    pub grid: GridSpec,
    pub window: WindowSpec,
    pub split: SplitConfig,
    pub model: ModelDims,
    pub train: TrainConfig,
    pub plan_rules: PlanRules,
    pub horizons_min: Vec<u32>,
}

impl Default for LabConfig {
    fn default() -> Self {
        LabConfig {
            seed: 42,
            replications: 50,
            line: LineConfig::default(),
            dispatch: DispatchPlan::default(),
            grid: GridSpec::default(),
            window: WindowSpec::default(),
            split: SplitConfig::default(),
            model: ModelDims::default(),
            train: TrainConfig::default(),
            plan_rules: PlanRules::default(),
            horizons_min: vec![15, 30, 45, 60],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub validation_fraction: f64,
    /// Keep every n-th training anchor; 1 keeps them all.
    pub anchor_stride: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { validation_fraction: 0.2, anchor_stride: 1 }
    }
}

impl LabConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn load_or_default(path: Option<&Path>) -> anyhow::Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::default()),
        }
    }

    /// Seed stream for a pipeline stage, so stages can be rerun independently.
    pub fn stage_seed(&self, stage: Stage) -> u64 {
        self.seed.wrapping_mul(0x100_0000_01b3) ^ stage as u64
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.line.validate().context("line")?;
        self.grid.validate().context("grid")?;
        self.window.validate(self.grid.n_distance_bins).context("window")?;
        self.model.validate().context("model")?;
        self.train.validate().context("train")?;
        anyhow::ensure!(self.replications >= 1, "replications must be at least 1");
        anyhow::ensure!(self.split.anchor_stride >= 1, "split.anchor_stride must be at least 1");
        anyhow::ensure!(
            self.model.n_distance_bins == self.grid.n_distance_bins,
            "model.n_distance_bins ({}) must equal grid.n_distance_bins ({})",
            self.model.n_distance_bins,
            self.grid.n_distance_bins
        );
        anyhow::ensure!(!self.horizons_min.is_empty(), "horizons_min is empty");
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Stage {
    Split = 1,
    Init = 2,
    Shuffle = 3,
}
