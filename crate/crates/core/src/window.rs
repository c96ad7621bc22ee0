//! Sliding `(x, t_future, y)` windows over normalized grids and the
//! replication-level train/validation split.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::grid::HeadwayGrid;
use crate::{Tensor, N_DIRECTIONS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub lookback: usize,
    pub horizon: usize,
    pub terminal_bin_nb: usize,
    pub terminal_bin_sb: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec {
            lookback: 30,
            horizon: 15,
            terminal_bin_nb: 0,
            terminal_bin_sb: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WindowError {
    #[error("lookback and horizon must be at least 1")]
    EmptyWindow,
    #[error("terminal bin {bin} outside 0..{n_bins}")]
    TerminalBin { bin: usize, n_bins: usize },
    #[error("grid must be normalized before windowing")]
    NotNormalized,
    #[error("validation fraction {0} outside (0, 1)")]
    Fraction(f64),
    #[error("need at least two replications to hold one out, found {0}")]
    TooFewReplications(usize),
}

impl WindowSpec {
    pub fn validate(&self, n_distance_bins: usize) -> Result<(), WindowError> {
        if self.lookback == 0 || self.horizon == 0 {
            return Err(WindowError::EmptyWindow);
        }
        for bin in [self.terminal_bin_nb, self.terminal_bin_sb] {
            if bin >= n_distance_bins {
                return Err(WindowError::TerminalBin {
                    bin,
                    n_bins: n_distance_bins,
                });
            }
        }
        Ok(())
    }

    pub fn terminal_bins(&self) -> [usize; N_DIRECTIONS] {
        [self.terminal_bin_nb, self.terminal_bin_sb]
    }
}

/// One training/evaluation example, all values normalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    /// `[L x N_d x N_dir x 1]`, time bins `anchor - L .. anchor`.
    pub x: Tensor<f32>,
    /// `[F x N_dir x 1]`, terminal-bin headways over the horizon.
    pub t_future: Tensor<f32>,
    /// `[F x N_d x N_dir x 1]`, time bins `anchor .. anchor + F`.
    pub y: Tensor<f32>,
    pub replication_id: u32,
    pub anchor_time_bin: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SampleRole {
    Train,
    Validation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub samples: Vec<Sample>,
    pub role: SampleRole,
}

impl SampleSet {
    pub fn replication_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.samples.iter().map(|s| s.replication_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

/// Raised instead of an error when a grid is too short for a single window.
#[derive(Debug, Clone, PartialEq)]
pub struct ShortGrid {
    pub replication_id: u32,
    pub n_time_bins: usize,
    pub needed: usize,
}

fn frames(grid: &HeadwayGrid, from: usize, to: usize) -> Vec<f32> {
    let width = grid.spec.n_distance_bins * grid.spec.n_directions;
    grid.values[from * width..to * width]
        .iter()
        .map(|&v| v as f32)
        .collect()
}

/// One sample per anchor `t` in `L ..= n_time_bins - F`, stride 1.
pub fn extract_samples(
    grid: &HeadwayGrid,
    spec: &WindowSpec,
    replication_id: u32,
) -> Result<(Vec<Sample>, Option<ShortGrid>), WindowError> {
    if !grid.normalized {
        return Err(WindowError::NotNormalized);
    }
    let n_d = grid.spec.n_distance_bins;
    spec.validate(n_d)?;
    let n_t = grid.n_time_bins();
    let (l, f) = (spec.lookback, spec.horizon);
    if n_t < l + f {
        return Ok((
            Vec::new(),
            Some(ShortGrid {
                replication_id,
                n_time_bins: n_t,
                needed: l + f,
            }),
        ));
    }
    let terminals = spec.terminal_bins();
    let samples = (l..=n_t - f)
        .map(|t| {
            let x = Tensor::from_vec(&[l, n_d, N_DIRECTIONS, 1], frames(grid, t - l, t))
                .expect("window shape");
            let y = Tensor::from_vec(&[f, n_d, N_DIRECTIONS, 1], frames(grid, t, t + f))
                .expect("window shape");
            let mut terminal = Vec::with_capacity(f * N_DIRECTIONS);
            for step in 0..f {
                for (k, &bin) in terminals.iter().enumerate() {
                    terminal.push(y.get(&[step, bin, k, 0]));
                }
            }
            let t_future =
                Tensor::from_vec(&[f, N_DIRECTIONS, 1], terminal).expect("terminal shape");
            Sample {
                x,
                t_future,
                y,
                replication_id,
                anchor_time_bin: t,
            }
        })
        .collect();
    Ok((samples, None))
}

/// Holds out whole replications: ids are shuffled with `seed` and the last
/// `ceil(fraction * R)` become validation.
pub fn split_by_replication(
    samples: Vec<Sample>,
    validation_fraction: f64,
    seed: u64,
) -> Result<(SampleSet, SampleSet), WindowError> {
    if !(validation_fraction > 0.0 && validation_fraction < 1.0) {
        return Err(WindowError::Fraction(validation_fraction));
    }
    let mut ids: Vec<u32> = samples.iter().map(|s| s.replication_id).collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 2 {
        return Err(WindowError::TooFewReplications(ids.len()));
    }
    let validation_ids = held_out_replications(&ids, validation_fraction, seed);
    let (val, train): (Vec<Sample>, Vec<Sample>) = samples
        .into_iter()
        .partition(|s| validation_ids.binary_search(&s.replication_id).is_ok());
    Ok((
        SampleSet {
            samples: train,
            role: SampleRole::Train,
        },
        SampleSet {
            samples: val,
            role: SampleRole::Validation,
        },
    ))
}

/// The validation replication ids (sorted) for a set of distinct ids.
pub fn held_out_replications(
    distinct_ids: &[u32],
    validation_fraction: f64,
    seed: u64,
) -> Vec<u32> {
    let mut ids = distinct_ids.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let r = ids.len();
    let n_val = (libm::ceil(validation_fraction * r as f64 - 1e-9) as usize)
        .clamp(1, r.saturating_sub(1).max(1));
    let mut val = ids.split_off(r - n_val);
    val.sort_unstable();
    val
}
