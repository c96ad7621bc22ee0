//! Terminal dispatch plans and their predicted downstream effect.
//!
//! A plan fixes the departure headways at one direction's terminal for every
//! future time bin. The other direction keeps a base terminal series. Plans
//! are compared by the per-distance-bin coefficient of variation (std / mean
//! over the horizon) of the predicted headways.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::grid::Scaler;
use crate::predict::{predict_recursive, PredictError, TrainedModel};
use crate::{Direction, Tensor, N_DIRECTIONS};

pub const DEFAULT_MIN_SAFE_HEADWAY_S: f64 = 120.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalPlan {
    pub direction: Direction,
    pub label: String,
    pub headways_s: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlanError {
    #[error("plan is empty")]
    Empty,
    #[error("entries below the {minimum_s} s minimum headway: {entries:?}")]
    BelowMinimum {
        minimum_s: f64,
        entries: Vec<(usize, f64)>,
    },
    #[error("observed terminal headways must be finite and positive (index {0})")]
    BadObservation(usize),
    #[error("plans differ in direction or length from plan 0 (plan {0})")]
    Inconsistent(usize),
    #[error("plan length {len} is not a multiple of the model horizon {horizon}")]
    Length { len: usize, horizon: usize },
    #[error("baseline index {index} out of range for {n_plans} plans")]
    Baseline { index: usize, n_plans: usize },
    #[error("base terminal series must be [bins x {N_DIRECTIONS} x 1] with at least {0} bins")]
    BaseSeries(usize),
    #[error(transparent)]
    Predict(#[from] PredictError),
}

/// Plan construction and validation against a minimum safe headway.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanRules {
    pub min_headway_s: f64,
}

impl Default for PlanRules {
    fn default() -> Self {
        PlanRules {
            min_headway_s: DEFAULT_MIN_SAFE_HEADWAY_S,
        }
    }
}

impl PlanRules {
    pub fn validate(&self, plan: &TerminalPlan) -> Result<(), PlanError> {
        if plan.headways_s.is_empty() {
            return Err(PlanError::Empty);
        }
        let entries: Vec<(usize, f64)> = plan
            .headways_s
            .iter()
            .copied()
            .enumerate()
            .filter(|&(_, h)| !(h.is_finite() && h > 0.0 && h >= self.min_headway_s))
            .collect();
        if entries.is_empty() {
            Ok(())
        } else {
            Err(PlanError::BelowMinimum {
                minimum_s: self.min_headway_s,
                entries,
            })
        }
    }

    /// The same headway in every bin.
    pub fn plan_even(
        &self,
        direction: Direction,
        target_s: f64,
        horizon_bins: usize,
    ) -> Result<TerminalPlan, PlanError> {
        let plan = TerminalPlan {
            direction,
            label: String::from("even"),
            headways_s: vec![target_s; horizon_bins],
        };
        self.validate(&plan)?;
        Ok(plan)
    }

    /// Holding: each projected headway is raised to the mean of the
    /// observations (and the minimum headway) if it falls short of it, so
    /// gaps only ever lengthen.
    ///
    /// The projection is the last `horizon_bins` observations, repeated
    /// cyclically when fewer are available.
    pub fn plan_holding(
        &self,
        direction: Direction,
        observed_s: &[f64],
        horizon_bins: usize,
    ) -> Result<TerminalPlan, PlanError> {
        let projection = holding_projection(observed_s, horizon_bins)?;
        let mean = observed_s.iter().sum::<f64>() / observed_s.len() as f64;
        let floor = mean.max(self.min_headway_s);
        let headways_s = projection.iter().map(|&p| p.max(floor)).collect();
        let plan = TerminalPlan {
            direction,
            label: String::from("holding"),
            headways_s,
        };
        self.validate(&plan)?;
        Ok(plan)
    }

    pub fn plan_custom(
        &self,
        direction: Direction,
        label: &str,
        pattern: &[f64],
    ) -> Result<TerminalPlan, PlanError> {
        let plan = TerminalPlan {
            direction,
            label: String::from(label),
            headways_s: pattern.to_vec(),
        };
        self.validate(&plan)?;
        Ok(plan)
    }
}

/// The observed series projected onto the horizon, as used by holding.
pub fn holding_projection(observed_s: &[f64], horizon_bins: usize) -> Result<Vec<f64>, PlanError> {
    if observed_s.is_empty() {
        return Err(PlanError::Empty);
    }
    if let Some(i) = observed_s.iter().position(|h| !(h.is_finite() && *h > 0.0)) {
        return Err(PlanError::BadObservation(i));
    }
    let n = observed_s.len();
    Ok(if n >= horizon_bins {
        observed_s[n - horizon_bins..].to_vec()
    } else {
        (0..horizon_bins).map(|i| observed_s[i % n]).collect()
    })
}

/// Per distance bin and direction: `(std / mean, mean)` of a prediction in
/// seconds over its time axis. Population std; a zero mean gives CV 0.
pub fn coefficient_of_variation(
    prediction_s: &Tensor<f32>,
) -> (Vec<[f64; N_DIRECTIONS]>, Vec<[f64; N_DIRECTIONS]>) {
    let s = prediction_s.shape();
    let (bins, n_d) = (s[0], s[1]);
    let mut cv = vec![[0.0; N_DIRECTIONS]; n_d];
    let mut means = vec![[0.0; N_DIRECTIONS]; n_d];
    for j in 0..n_d {
        for k in 0..N_DIRECTIONS {
            let vals = (0..bins).map(|t| prediction_s.get(&[t, j, k, 0]) as f64);
            let mean = vals.clone().sum::<f64>() / bins as f64;
            let var = vals.map(|v| (v - mean) * (v - mean)).sum::<f64>() / bins as f64;
            means[j][k] = mean;
            cv[j][k] = if mean > 0.0 {
                libm::sqrt(var) / mean
            } else {
                0.0
            };
        }
    }
    (cv, means)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanOutcome {
    pub plan: TerminalPlan,
    /// `[bins x N_d x N_dir x 1]` seconds.
    pub prediction_s: Tensor<f32>,
    /// Indexed `[distance_bin][direction]`.
    pub cv: Vec<[f64; N_DIRECTIONS]>,
    pub mean_s: Vec<[f64; N_DIRECTIONS]>,
    pub cv_delta: Vec<[f64; N_DIRECTIONS]>,
    pub mean_delta_s: Vec<[f64; N_DIRECTIONS]>,
    /// CV averaged over distance bins, per direction.
    pub line_cv: [f64; N_DIRECTIONS],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub baseline_index: usize,
    pub outcomes: Vec<PlanOutcome>,
}

/// Terminal series for the horizon that repeats the last observed terminal
/// headway of each direction (normalized).
pub fn persistence_terminal(
    model: &TrainedModel,
    x_window: &Tensor<f32>,
    bins: usize,
) -> Result<Tensor<f32>, PlanError> {
    let l = x_window.shape().first().copied().unwrap_or(0);
    if l == 0 || x_window.shape().len() != 4 {
        return Err(PlanError::Predict(PredictError::WindowShape {
            expected: [model.lookback(), model.n_distance_bins(), N_DIRECTIONS, 1],
            found: x_window.shape().to_vec(),
        }));
    }
    let terminals = model.window.terminal_bins();
    let last: Vec<f32> = (0..N_DIRECTIONS)
        .map(|k| x_window.get(&[l - 1, terminals[k], k, 0]))
        .collect();
    let data = (0..bins).flat_map(|_| last.iter().copied()).collect();
    Ok(Tensor::from_vec(&[bins, N_DIRECTIONS, 1], data).expect("terminal shape"))
}

/// Runs every plan through the model on the same window and reports CV and
/// mean deltas against `plans[baseline_index]`.
///
/// `base_terminal` (normalized, `[bins x N_dir x 1]`) supplies the terminal
/// series of the direction a plan does not set.
pub fn compare_plans(
    model: &TrainedModel,
    scaler: &Scaler,
    rules: &PlanRules,
    x_window: &Tensor<f32>,
    base_terminal: &Tensor<f32>,
    plans: &[TerminalPlan],
    baseline_index: usize,
) -> Result<ComparisonReport, PlanError> {
    let first = plans.first().ok_or(PlanError::Empty)?;
    if baseline_index >= plans.len() {
        return Err(PlanError::Baseline {
            index: baseline_index,
            n_plans: plans.len(),
        });
    }
    for (i, p) in plans.iter().enumerate() {
        rules.validate(p)?;
        if p.direction != first.direction || p.headways_s.len() != first.headways_s.len() {
            return Err(PlanError::Inconsistent(i));
        }
    }
    let bins = first.headways_s.len();
    let f = model.horizon();
    if bins % f != 0 {
        return Err(PlanError::Length {
            len: bins,
            horizon: f,
        });
    }
    let bs = base_terminal.shape();
    if bs.len() != 3 || bs[0] < bins || bs[1] != N_DIRECTIONS || bs[2] != 1 {
        return Err(PlanError::BaseSeries(bins));
    }
    let anchor = model.lookback();
    let mut outcomes = Vec::with_capacity(plans.len());
    for p in plans {
        let mut t = Tensor::from_vec(
            &[bins, N_DIRECTIONS, 1],
            base_terminal.data()[..bins * N_DIRECTIONS].to_vec(),
        )
        .expect("terminal shape");
        for (step, &h) in p.headways_s.iter().enumerate() {
            t.set(
                &[step, p.direction.index(), 0],
                scaler.normalize_value(h) as f32,
            );
        }
        let pred = predict_recursive(model, scaler, x_window, &t, bins / f, anchor)?;
        let (cv, mean_s) = coefficient_of_variation(&pred.y_hat);
        let mut line_cv = [0.0; N_DIRECTIONS];
        for row in &cv {
            for k in 0..N_DIRECTIONS {
                line_cv[k] += row[k] / cv.len() as f64;
            }
        }
        outcomes.push(PlanOutcome {
            plan: p.clone(),
            prediction_s: pred.y_hat,
            cv,
            mean_s,
            cv_delta: Vec::new(),
            mean_delta_s: Vec::new(),
            line_cv,
        });
    }
    let (base_cv, base_mean) = (
        outcomes[baseline_index].cv.clone(),
        outcomes[baseline_index].mean_s.clone(),
    );
    for o in &mut outcomes {
        let diff = |a: &[[f64; 2]], b: &[[f64; 2]]| {
            a.iter()
                .zip(b)
                .map(|(x, y)| [x[0] - y[0], x[1] - y[1]])
                .collect()
        };
        o.cv_delta = diff(&o.cv, &base_cv);
        o.mean_delta_s = diff(&o.mean_s, &base_mean);
    }
    Ok(ComparisonReport {
        baseline_index,
        outcomes,
    })
}
