//! Single-shot and recursive prediction, plus RMSE / R² evaluation.
//!
//! Inputs and plans are normalized with the training scaler; results are
//! reported in seconds.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::convlstm::{model_forward, ModelError, ModelParams};
use crate::grid::Scaler;
use crate::window::{Sample, WindowSpec};
use crate::{Direction, Tensor, N_DIRECTIONS};

/// A trained model together with everything needed to interpret its I/O.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub params: ModelParams<f32>,
    pub scaler: Scaler,
    pub window: WindowSpec,
    pub delta_t_s: f64,
}

impl TrainedModel {
    pub fn lookback(&self) -> usize {
        self.window.lookback
    }

    pub fn horizon(&self) -> usize {
        self.window.horizon
    }

    pub fn n_distance_bins(&self) -> usize {
        self.params.dims.n_distance_bins
    }

    /// Minutes covered by one forward pass.
    pub fn round_minutes(&self) -> f64 {
        self.horizon() as f64 * self.delta_t_s / 60.0
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PredictError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("scaler digest {found:#018x} does not match the model's {expected:#018x}")]
    ScalerMismatch { expected: u64, found: u64 },
    #[error("window must be {expected:?}, got {found:?}")]
    WindowShape {
        expected: [usize; 4],
        found: Vec<usize>,
    },
    #[error("terminal plan covers {got} bins, {needed} needed")]
    PlanLength { needed: usize, got: usize },
    #[error("terminal plan must be [bins x {N_DIRECTIONS} x 1]")]
    PlanShape,
    #[error("n_rounds must be at least 1")]
    NoRounds,
    #[error("no samples to evaluate")]
    EmptySamples,
    #[error("horizon {0} min is not a positive multiple of the model's round length")]
    Horizon(u32),
    #[error("samples carry {available} future bins, horizon needs {needed}")]
    ShortTruth { available: usize, needed: usize },
    #[error("distance bin {bin} outside 0..{n_bins}")]
    DistanceBin { bin: usize, n_bins: usize },
    #[error("model produced a non-finite prediction")]
    NonFinite,
}

/// Denormalized prediction `[bins x N_d x N_dir x 1]` in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionResult {
    pub y_hat: Tensor<f32>,
    pub horizon_minutes: u32,
    pub anchor_time_bin: usize,
}

fn check_inputs(
    model: &TrainedModel,
    scaler: &Scaler,
    x: &Tensor<f32>,
) -> Result<(), PredictError> {
    let expected = model.scaler.digest();
    let found = scaler.digest();
    if expected != found {
        return Err(PredictError::ScalerMismatch { expected, found });
    }
    let want = [model.lookback(), model.n_distance_bins(), N_DIRECTIONS, 1];
    if x.shape() != want {
        return Err(PredictError::WindowShape {
            expected: want,
            found: x.shape().to_vec(),
        });
    }
    Ok(())
}

fn denormalized(
    model: &TrainedModel,
    y: Tensor<f32>,
    anchor_time_bin: usize,
) -> Result<PredictionResult, PredictError> {
    if !y.all_finite() {
        return Err(PredictError::NonFinite);
    }
    let bins = y.shape()[0];
    let y_hat = y.map(|v| model.scaler.denormalize_value(v as f64) as f32);
    let horizon_minutes = libm::round(bins as f64 * model.delta_t_s / 60.0) as u32;
    Ok(PredictionResult {
        y_hat,
        horizon_minutes,
        anchor_time_bin,
    })
}

fn plan_slice(plan: &Tensor<f32>, from: usize, len: usize) -> Tensor<f32> {
    let row = N_DIRECTIONS;
    Tensor::from_vec(
        &[len, N_DIRECTIONS, 1],
        plan.data()[from * row..(from + len) * row].to_vec(),
    )
    .expect("plan slice shape")
}

/// One forward pass over a normalized window and an `F`-bin normalized plan.
pub fn predict_single(
    model: &TrainedModel,
    scaler: &Scaler,
    x_window: &Tensor<f32>,
    terminal_plan: &Tensor<f32>,
    anchor_time_bin: usize,
) -> Result<PredictionResult, PredictError> {
    check_inputs(model, scaler, x_window)?;
    let ps = terminal_plan.shape();
    if ps.len() != 3 || ps[1] != N_DIRECTIONS || ps[2] != 1 {
        return Err(PredictError::PlanShape);
    }
    let f = model.horizon();
    if ps[0] < f {
        return Err(PredictError::PlanLength {
            needed: f,
            got: ps[0],
        });
    }
    let (y, _) = model_forward(x_window, &plan_slice(terminal_plan, 0, f), &model.params)?;
    denormalized(model, y, anchor_time_bin)
}

/// `n_rounds` chained forward passes; see [`predict_recursive_observed`].
pub fn predict_recursive(
    model: &TrainedModel,
    scaler: &Scaler,
    x_window: &Tensor<f32>,
    terminal_plan: &Tensor<f32>,
    n_rounds: usize,
    anchor_time_bin: usize,
) -> Result<PredictionResult, PredictError> {
    let y = recursive_normalized(
        model,
        scaler,
        x_window,
        terminal_plan,
        n_rounds,
        &mut |_, _| {},
    )?;
    denormalized(model, y, anchor_time_bin)
}

/// Like [`predict_recursive`], calling `observer(round, window)` with the
/// normalized input window of every round before it runs.
///
/// Round `r > 0` reads the previous window with its oldest `F` bins dropped
/// and the previous round's normalized predictions appended.
pub fn predict_recursive_observed(
    model: &TrainedModel,
    scaler: &Scaler,
    x_window: &Tensor<f32>,
    terminal_plan: &Tensor<f32>,
    n_rounds: usize,
    anchor_time_bin: usize,
    observer: &mut dyn FnMut(usize, &Tensor<f32>),
) -> Result<PredictionResult, PredictError> {
    let y = recursive_normalized(model, scaler, x_window, terminal_plan, n_rounds, observer)?;
    denormalized(model, y, anchor_time_bin)
}

fn recursive_normalized(
    model: &TrainedModel,
    scaler: &Scaler,
    x_window: &Tensor<f32>,
    terminal_plan: &Tensor<f32>,
    n_rounds: usize,
    observer: &mut dyn FnMut(usize, &Tensor<f32>),
) -> Result<Tensor<f32>, PredictError> {
    check_inputs(model, scaler, x_window)?;
    if n_rounds == 0 {
        return Err(PredictError::NoRounds);
    }
    let ps = terminal_plan.shape();
    if ps.len() != 3 || ps[1] != N_DIRECTIONS || ps[2] != 1 {
        return Err(PredictError::PlanShape);
    }
    let f = model.horizon();
    let needed = n_rounds * f;
    if ps[0] < needed {
        return Err(PredictError::PlanLength { needed, got: ps[0] });
    }
    let l = model.lookback();
    let frame = model.n_distance_bins() * N_DIRECTIONS;
    let mut window = x_window.clone();
    let mut out = Vec::with_capacity(needed * frame);
    for round in 0..n_rounds {
        observer(round, &window);
        let t = plan_slice(terminal_plan, round * f, f);
        let (y, _) = model_forward(&window, &t, &model.params)?;
        out.extend_from_slice(y.data());
        if round + 1 < n_rounds {
            let mut next = Vec::with_capacity(l * frame);
            let history = window.data();
            let preds = y.data();
            // last L frames of history ++ predictions
            let total = l + f;
            for i in total - l..total {
                if i < l {
                    next.extend_from_slice(&history[i * frame..(i + 1) * frame]);
                } else {
                    next.extend_from_slice(&preds[(i - l) * frame..(i - l + 1) * frame]);
                }
            }
            window = Tensor::from_vec(x_window.shape(), next).expect("window shape");
        }
    }
    Ok(
        Tensor::from_vec(&[needed, model.n_distance_bins(), N_DIRECTIONS, 1], out)
            .expect("prediction shape"),
    )
}

/// RMSE and pooled R² of paired values.
///
/// R² is 1 when the actual values are constant and matched exactly, 0 when
/// they are constant and missed.
pub fn rmse_r2(actual: &[f64], predicted: &[f64]) -> Option<(f64, f64)> {
    if actual.is_empty() || actual.len() != predicted.len() {
        return None;
    }
    let n = actual.len() as f64;
    let mean = actual.iter().sum::<f64>() / n;
    let ss_res: f64 = actual
        .iter()
        .zip(predicted)
        .map(|(y, p)| (y - p) * (y - p))
        .sum();
    let ss_tot: f64 = actual.iter().map(|y| (y - mean) * (y - mean)).sum();
    let r2 = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else if ss_res == 0.0 {
        1.0
    } else {
        0.0
    };
    Some((libm::sqrt(ss_res / n), r2))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub direction: Direction,
    pub horizon_min: u32,
    pub rmse_s: f64,
    pub r2: f64,
    pub n: usize,
}

/// One row per (direction, horizon), directions outermost.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<MetricRow>,
}

impl MetricsReport {
    pub fn get(&self, direction: Direction, horizon_min: u32) -> Option<&MetricRow> {
        self.rows
            .iter()
            .find(|r| r.direction == direction && r.horizon_min == horizon_min)
    }
}

/// Paired actual/predicted seconds per (direction, horizon).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairedValues {
    pub pairs: BTreeMap<(Direction, u32), (Vec<f64>, Vec<f64>)>,
}

impl PairedValues {
    pub fn metrics(&self) -> MetricsReport {
        let rows = self
            .pairs
            .iter()
            .filter_map(|(&(direction, horizon_min), (a, p))| {
                rmse_r2(a, p).map(|(rmse_s, r2)| MetricRow {
                    direction,
                    horizon_min,
                    rmse_s,
                    r2,
                    n: a.len(),
                })
            })
            .collect();
        MetricsReport { rows }
    }
}

/// How a sample's normalized future is forecast over `bins` steps.
pub trait Forecaster {
    fn forecast(&self, sample: &Sample, bins: usize) -> Result<Tensor<f32>, PredictError>;
}

/// The model, run recursively with the sample's ground-truth terminal series.
pub struct ModelForecaster<'a> {
    pub model: &'a TrainedModel,
    pub scaler: &'a Scaler,
}

impl Forecaster for ModelForecaster<'_> {
    fn forecast(&self, sample: &Sample, bins: usize) -> Result<Tensor<f32>, PredictError> {
        let rounds = bins.div_ceil(self.model.horizon());
        recursive_normalized(
            self.model,
            self.scaler,
            &sample.x,
            &sample.t_future,
            rounds,
            &mut |_, _| {},
        )
    }
}

/// Repeats the last observed frame.
pub struct Persistence;

impl Forecaster for Persistence {
    fn forecast(&self, sample: &Sample, bins: usize) -> Result<Tensor<f32>, PredictError> {
        let s = sample.x.shape();
        let last = sample.x.outer(s[0] - 1);
        let mut data = Vec::with_capacity(bins * last.len());
        for _ in 0..bins {
            data.extend_from_slice(last);
        }
        Ok(Tensor::from_vec(&[bins, s[1], s[2], s[3]], data).expect("persistence shape"))
    }
}

fn horizon_bins(
    horizon_min: u32,
    round_bins: usize,
    round_minutes: f64,
) -> Result<usize, PredictError> {
    let rounds = horizon_min as f64 / round_minutes;
    if horizon_min == 0 || libm::fabs(rounds - libm::round(rounds)) > 1e-9 {
        return Err(PredictError::Horizon(horizon_min));
    }
    Ok(libm::round(rounds) as usize * round_bins)
}

/// Pairs actual and forecast seconds for every cell in the horizon block
/// `(h - round, h]` of each requested horizon.
///
/// `bins` restricts the distance bins considered (all when `None`). Samples
/// must carry at least the largest horizon's worth of future bins.
pub fn collect_pairs(
    forecaster: &dyn Forecaster,
    model: &TrainedModel,
    samples: &[Sample],
    horizons_min: &[u32],
    bins: Option<&[usize]>,
) -> Result<PairedValues, PredictError> {
    if samples.is_empty() {
        return Err(PredictError::EmptySamples);
    }
    let f = model.horizon();
    let n_d = model.n_distance_bins();
    let mut blocks = Vec::with_capacity(horizons_min.len());
    for &h in horizons_min {
        let end = horizon_bins(h, f, model.round_minutes())?;
        blocks.push((h, end - f, end));
    }
    let max_bins = blocks
        .iter()
        .map(|b| b.2)
        .max()
        .ok_or(PredictError::Horizon(0))?;
    if let Some(bins) = bins {
        if let Some(&bin) = bins.iter().find(|&&b| b >= n_d) {
            return Err(PredictError::DistanceBin { bin, n_bins: n_d });
        }
    }
    let all: Vec<usize> = (0..n_d).collect();
    let bins = bins.unwrap_or(&all);
    let mut out = PairedValues::default();
    let s = &model.scaler;
    for sample in samples {
        let available = sample.y.shape()[0];
        if available < max_bins {
            return Err(PredictError::ShortTruth {
                available,
                needed: max_bins,
            });
        }
        let y_hat = forecaster.forecast(sample, max_bins)?;
        for &(h, lo, hi) in &blocks {
            for dir in Direction::ALL {
                let entry = out.pairs.entry((dir, h)).or_default();
                for t in lo..hi {
                    for &j in bins {
                        let k = dir.index();
                        entry
                            .0
                            .push(s.denormalize_value(sample.y.get(&[t, j, k, 0]) as f64));
                        entry
                            .1
                            .push(s.denormalize_value(y_hat.get(&[t, j, k, 0]) as f64));
                    }
                }
            }
        }
    }
    Ok(out)
}

/// RMSE / R² per (direction, horizon) over every distance bin.
pub fn evaluate(
    model: &TrainedModel,
    scaler: &Scaler,
    samples: &[Sample],
    horizons_min: &[u32],
) -> Result<MetricsReport, PredictError> {
    check_scaler(model, scaler)?;
    let forecaster = ModelForecaster { model, scaler };
    Ok(collect_pairs(&forecaster, model, samples, horizons_min, None)?.metrics())
}

/// The persistence baseline scored exactly like [`evaluate`].
pub fn evaluate_persistence(
    model: &TrainedModel,
    samples: &[Sample],
    horizons_min: &[u32],
) -> Result<MetricsReport, PredictError> {
    Ok(collect_pairs(&Persistence, model, samples, horizons_min, None)?.metrics())
}

fn check_scaler(model: &TrainedModel, scaler: &Scaler) -> Result<(), PredictError> {
    let (expected, found) = (model.scaler.digest(), scaler.digest());
    if expected != found {
        return Err(PredictError::ScalerMismatch { expected, found });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub direction: Direction,
    pub horizon_min: u32,
    pub actual_s: f64,
    pub predicted_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationScatter {
    pub distance_bin: usize,
    pub points: Vec<ScatterPoint>,
    pub summary: MetricsReport,
}

/// Actual/predicted pairs at a single distance bin.
pub fn station_scatter(
    model: &TrainedModel,
    scaler: &Scaler,
    samples: &[Sample],
    distance_bin: usize,
    horizons_min: &[u32],
) -> Result<StationScatter, PredictError> {
    check_scaler(model, scaler)?;
    let forecaster = ModelForecaster { model, scaler };
    let paired = collect_pairs(
        &forecaster,
        model,
        samples,
        horizons_min,
        Some(&[distance_bin]),
    )?;
    let mut points = Vec::new();
    for (&(direction, horizon_min), (a, p)) in &paired.pairs {
        points.extend(
            a.iter()
                .zip(p)
                .map(|(&actual_s, &predicted_s)| ScatterPoint {
                    direction,
                    horizon_min,
                    actual_s,
                    predicted_s,
                }),
        );
    }
    Ok(StationScatter {
        distance_bin,
        points,
        summary: paired.metrics(),
    })
}
