//! Mini-batch training with validation monitoring and early stopping.

use alloc::boxed::Box;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::convlstm::{
    adam_step, init_params, model_backward, model_forward, mse_loss, AdamConfig, AdamState,
    ModelDims, ModelError, ModelParams,
};
use crate::window::{Sample, SampleSet};
use crate::N_DIRECTIONS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub patience: usize,
    pub seed: u64,
    /// Smallest validation-loss decrease that counts as an improvement.
    #[serde(default = "default_min_delta")]
    pub min_delta: f64,
}

fn default_min_delta() -> f64 {
    1e-6
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-3,
            patience: 50,
            seed: 0,
            min_delta: 1e-6,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be positive"));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be positive"));
        }
        if self.patience == 0 {
            return Err(TrainError::Config("patience must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(TrainError::Config("learning_rate must be positive"));
        }
        if !(self.min_delta.is_finite() && self.min_delta >= 0.0) {
            return Err(TrainError::Config("min_delta must be non-negative"));
        }
        Ok(())
    }
}

/// Per-epoch losses, epochs numbered from 1.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn epochs_run(&self) -> usize {
        self.val_loss.len()
    }

    pub fn best_val_loss(&self) -> Option<f64> {
        self.best_epoch
            .checked_sub(1)
            .and_then(|i| self.val_loss.get(i).copied())
    }
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(&'static str),
    #[error("{0} set is empty")]
    EmptySet(&'static str),
    #[error("sample {index} of the {set} set has a different shape")]
    Heterogeneous { set: &'static str, index: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    /// Carries the best parameters recorded before the loss went non-finite.
    #[error("training diverged in epoch {epoch}: {reason}")]
    Diverged {
        epoch: usize,
        reason: &'static str,
        last_finite: Box<(ModelParams<f32>, TrainHistory)>,
    },
}

/// Early-stopping bookkeeping, fed one validation loss per epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    min_delta: f64,
    best: f64,
    best_epoch: usize,
    since_improvement: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        EarlyStopping {
            patience,
            min_delta,
            best: f64::INFINITY,
            best_epoch: 0,
            since_improvement: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> StopDecision {
        if self.best_epoch == 0 || val_loss <= self.best - self.min_delta {
            self.best = val_loss;
            self.best_epoch = epoch;
            self.since_improvement = 0;
            return StopDecision::Improved;
        }
        self.since_improvement += 1;
        if self.since_improvement >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// Sample visiting order for one epoch; depends only on `(seed, epoch)`.
pub fn batch_order(n_samples: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n_samples).collect();
    let stream = seed
        ^ (epoch as u64)
            .wrapping_mul(0x9e37_79b9_7f4a_7c15)
            .rotate_left(17);
    order.shuffle(&mut Xoshiro256PlusPlus::seed_from_u64(stream));
    order
}

/// Sent to the observer after every epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub improved: bool,
}

fn check_homogeneous(set: &[Sample], name: &'static str) -> Result<(), TrainError> {
    let first = set.first().ok_or(TrainError::EmptySet(name))?;
    for (index, s) in set.iter().enumerate() {
        if s.x.shape() != first.x.shape()
            || s.t_future.shape() != first.t_future.shape()
            || s.y.shape() != first.y.shape()
        {
            return Err(TrainError::Heterogeneous { set: name, index });
        }
    }
    Ok(())
}

/// Mean per-sample MSE of `params` over `samples`.
pub fn dataset_loss(params: &ModelParams<f32>, samples: &[Sample]) -> Result<f64, ModelError> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for s in samples {
        let (y_hat, _) = model_forward(&s.x, &s.t_future, params)?;
        total += mse_loss(&s.y, &y_hat)?.0;
    }
    Ok(total / samples.len() as f64)
}

/// Trains from a fresh initialization drawn with `init_seed`.
pub fn train(
    train_set: &SampleSet,
    val_set: &SampleSet,
    dims: &ModelDims,
    config: &TrainConfig,
    init_seed: u64,
) -> Result<(ModelParams<f32>, TrainHistory), TrainError> {
    let params = init_params::<f32>(dims, init_seed)?;
    train_from(params, train_set, val_set, config, &mut |_| true)
}

/// Trains starting from `params`. The observer sees every epoch and may
/// return `false` to end training after that epoch.
pub fn train_from(
    mut params: ModelParams<f32>,
    train_set: &SampleSet,
    val_set: &SampleSet,
    config: &TrainConfig,
    observer: &mut dyn FnMut(&EpochReport) -> bool,
) -> Result<(ModelParams<f32>, TrainHistory), TrainError> {
    config.validate()?;
    params.dims.validate()?;
    check_homogeneous(&train_set.samples, "train")?;
    check_homogeneous(&val_set.samples, "validation")?;
    let first = &train_set.samples[0];
    let n_d = params.dims.n_distance_bins;
    if first.x.shape()[1..] != [n_d, N_DIRECTIONS, 1]
        || val_set.samples[0].x.shape() != first.x.shape()
    {
        return Err(ModelError::Shape("samples do not match the model's distance bins").into());
    }

    let mut adam = AdamState::new(&params, AdamConfig::default());
    let mut stopper = EarlyStopping::new(config.patience, config.min_delta);
    let mut history = TrainHistory::default();
    let mut best = params.clone();
    let n = train_set.samples.len();

    for epoch in 1..=config.epochs {
        let diverged =
            |reason, best: &ModelParams<f32>, history: &TrainHistory| TrainError::Diverged {
                epoch,
                reason,
                last_finite: Box::new((best.clone(), history.clone())),
            };
        let order = batch_order(n, config.seed, epoch);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut grads = params.zeros_like();
            let scale = 1.0 / batch.len() as f32;
            for &i in batch {
                let s = &train_set.samples[i];
                let (y_hat, cache) = model_forward(&s.x, &s.t_future, &params)?;
                let (loss, mut dy) = mse_loss(&s.y, &y_hat)?;
                if !loss.is_finite() {
                    return Err(diverged("non-finite training loss", &best, &history));
                }
                loss_sum += loss;
                dy.data_mut().iter_mut().for_each(|v| *v *= scale);
                let g = model_backward(&params, &cache, &dy)?;
                for ((_, acc), (_, part)) in grads.blocks_mut().into_iter().zip(g.blocks()) {
                    acc.data_mut()
                        .iter_mut()
                        .zip(part.data())
                        .for_each(|(a, b)| *a += *b);
                }
            }
            match adam_step(&mut params, &grads, &mut adam, config.learning_rate) {
                Ok(()) => {}
                Err(ModelError::NonFiniteGradient(_)) => {
                    return Err(diverged("non-finite gradient", &best, &history));
                }
                Err(e) => return Err(e.into()),
            }
        }
        let train_loss = loss_sum / n as f64;
        let val_loss = dataset_loss(&params, &val_set.samples)?;
        if !val_loss.is_finite() {
            return Err(diverged("non-finite validation loss", &best, &history));
        }
        history.train_loss.push(train_loss);
        history.val_loss.push(val_loss);
        let decision = stopper.observe(epoch, val_loss);
        if decision == StopDecision::Improved {
            best = params.clone();
            history.best_epoch = epoch;
        }
        let keep_going = observer(&EpochReport {
            epoch,
            train_loss,
            val_loss,
            improved: decision == StopDecision::Improved,
        });
        if decision == StopDecision::Stop {
            history.stopped_early = true;
            break;
        }
        if !keep_going {
            break;
        }
    }
    Ok((best, history))
}
