//! Trajectory events to a time x distance x direction headway grid.
//!
//! Cell `(t, j, k)` holds the mean headway of all activations that fall into
//! time bin `t` and distance bin `j` of direction `k`. Distances are relative
//! to each direction's departure terminal, so bin 0 is always where trains
//! enter service. Empty cells are filled per `(j, k)` column by carrying the
//! last observed headway forward in time (leading gaps take the first
//! observation); columns without any observation take the grid-wide mean.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::sim::{TrajectoryEvent, TrajectoryLog};
use crate::{Direction, N_DIRECTIONS};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GridError {
    #[error("invalid grid spec: {0}")]
    InvalidSpec(&'static str),
    #[error("time {t} s outside [{start}, {end})")]
    TimeOutOfRange { t: f64, start: f64, end: f64 },
    #[error("distance {d} ft outside [{min}, {max}]")]
    DistanceOutOfRange { d: f64, min: f64, max: f64 },
    #[error("grid has no observations to impute from")]
    NoObservations,
    #[error("scaler needs h_min < h_max, got {h_min} and {h_max}")]
    DegenerateScale { h_min: f64, h_max: f64 },
    #[error("no grids to fit a scaler on")]
    EmptyFit,
    #[error("grid still contains unobserved cells")]
    NotImputed,
    #[error("grid is {actual}, expected {expected}")]
    WrongUnits {
        expected: &'static str,
        actual: &'static str,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub t_start_s: f64,
    pub t_end_s: f64,
    pub delta_t_s: f64,
    pub n_distance_bins: usize,
    pub d_min_ft: f64,
    pub d_max_ft: f64,
    #[serde(default = "default_directions")]
    pub n_directions: usize,
}

fn default_directions() -> usize {
    N_DIRECTIONS
}

impl Default for GridSpec {
    /// 15:30 to 18:00 in one-minute bins over 64 bins of 2,200 ft.
    fn default() -> Self {
        GridSpec {
            t_start_s: 55_800.0,
            t_end_s: 64_800.0,
            delta_t_s: 60.0,
            n_distance_bins: 64,
            d_min_ft: 0.0,
            d_max_ft: 140_800.0,
            n_directions: N_DIRECTIONS,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<(), GridError> {
        if !(self.t_start_s.is_finite()
            && self.t_end_s.is_finite()
            && self.t_start_s < self.t_end_s)
        {
            return Err(GridError::InvalidSpec("t_start must precede t_end"));
        }
        if !(self.delta_t_s > 0.0 && self.delta_t_s.is_finite()) {
            return Err(GridError::InvalidSpec("delta_t must be positive"));
        }
        let bins = (self.t_end_s - self.t_start_s) / self.delta_t_s;
        if libm::fabs(bins - libm::round(bins)) > 1e-9 {
            return Err(GridError::InvalidSpec(
                "time window must be a whole number of bins",
            ));
        }
        if self.n_distance_bins == 0 {
            return Err(GridError::InvalidSpec("need at least one distance bin"));
        }
        if !(self.d_min_ft < self.d_max_ft) {
            return Err(GridError::InvalidSpec("d_min must be below d_max"));
        }
        if self.n_directions != N_DIRECTIONS {
            return Err(GridError::InvalidSpec(
                "exactly two directions are supported",
            ));
        }
        Ok(())
    }

    pub fn n_time_bins(&self) -> usize {
        libm::round((self.t_end_s - self.t_start_s) / self.delta_t_s) as usize
    }

    pub fn n_cells(&self) -> usize {
        self.n_time_bins() * self.n_distance_bins * self.n_directions
    }

    pub fn bin_width_ft(&self) -> f64 {
        (self.d_max_ft - self.d_min_ft) / self.n_distance_bins as f64
    }

    /// `floor((t - t_start) / delta_t)` over the half-open window.
    pub fn time_bin(&self, t: f64) -> Result<usize, GridError> {
        if !(t >= self.t_start_s && t < self.t_end_s) {
            return Err(GridError::TimeOutOfRange {
                t,
                start: self.t_start_s,
                end: self.t_end_s,
            });
        }
        let i = libm::floor((t - self.t_start_s) / self.delta_t_s) as usize;
        Ok(i.min(self.n_time_bins() - 1))
    }

    /// `floor((d - d_min) / bin_width)`; `d_max` itself lands in the last bin.
    pub fn distance_bin(&self, d: f64) -> Result<usize, GridError> {
        if !(d >= self.d_min_ft && d <= self.d_max_ft) {
            return Err(GridError::DistanceOutOfRange {
                d,
                min: self.d_min_ft,
                max: self.d_max_ft,
            });
        }
        let j = libm::floor((d - self.d_min_ft) / self.bin_width_ft()) as usize;
        Ok(j.min(self.n_distance_bins - 1))
    }

    pub fn index(&self, t: usize, j: usize, k: usize) -> usize {
        (t * self.n_distance_bins + j) * self.n_directions + k
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CellAggregate {
    pub sum: f64,
    pub count: u32,
}

impl CellAggregate {
    pub fn add(&mut self, h: f64) {
        self.sum += h;
        self.count += 1;
    }

    pub fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }
}

/// Dense `[n_time_bins x n_distance_bins x n_directions]` headway array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadwayGrid {
    pub spec: GridSpec,
    /// Seconds, or min-max scaled when `normalized` is set. `NaN` marks an
    /// unobserved cell until imputation.
    pub values: Vec<f64>,
    pub observed: Vec<bool>,
    pub normalized: bool,
}

impl HeadwayGrid {
    pub fn get(&self, t: usize, j: usize, k: usize) -> f64 {
        self.values[self.spec.index(t, j, k)]
    }

    pub fn is_observed(&self, t: usize, j: usize, k: usize) -> bool {
        self.observed[self.spec.index(t, j, k)]
    }

    pub fn is_imputed(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn n_time_bins(&self) -> usize {
        self.spec.n_time_bins()
    }

    fn units(&self) -> &'static str {
        if self.normalized {
            "normalized"
        } else {
            "in seconds"
        }
    }
}

/// Adds the headway of every activation: the gap to the previous activation
/// of the same block in the same direction by another train. First
/// activations keep `None`.
pub fn compute_headways(log: &TrajectoryLog) -> TrajectoryLog {
    let mut out = log.clone();
    let mut order: Vec<usize> = (0..out.events.len()).collect();
    order.sort_by(|&a, &b| {
        let (ea, eb) = (&out.events[a], &out.events[b]);
        (ea.direction, ea.block_id)
            .cmp(&(eb.direction, eb.block_id))
            .then(ea.timestamp_s.total_cmp(&eb.timestamp_s))
            .then(a.cmp(&b))
    });
    // latest activation of the current key, and the latest one by a train
    // other than that activation's train
    let mut last: Option<usize> = None;
    let mut last_other: Option<usize> = None;
    for &i in &order {
        let e = &log.events[i];
        let key = (e.direction, e.block_id);
        if last.is_some_and(|l| (log.events[l].direction, log.events[l].block_id) != key) {
            last = None;
            last_other = None;
        }
        let pred = match last {
            Some(l) if log.events[l].train_id != e.train_id => Some(l),
            Some(_) => last_other,
            None => None,
        };
        out.events[i].headway_s = pred.map(|p| e.timestamp_s - log.events[p].timestamp_s);
        if let Some(l) = last {
            if log.events[l].train_id != e.train_id {
                last_other = Some(l);
            }
        }
        last = Some(i);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rejection {
    MissingHeadway,
    Time,
    Distance,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RasterReport {
    /// `(event index, reason)` for every event left out of the grid.
    pub rejected: Vec<(usize, Rejection)>,
    pub accepted: usize,
}

/// Averages event headways into grid cells. Unobserved cells hold `NaN`.
pub fn rasterize(
    events: &[TrajectoryEvent],
    spec: &GridSpec,
) -> Result<(HeadwayGrid, RasterReport), GridError> {
    spec.validate()?;
    let mut cells = vec![CellAggregate::default(); spec.n_cells()];
    let mut report = RasterReport::default();
    for (i, e) in events.iter().enumerate() {
        let Some(h) = e.headway_s else {
            report.rejected.push((i, Rejection::MissingHeadway));
            continue;
        };
        let Ok(t) = spec.time_bin(e.timestamp_s) else {
            report.rejected.push((i, Rejection::Time));
            continue;
        };
        let Ok(j) = spec.distance_bin(e.distance_ft) else {
            report.rejected.push((i, Rejection::Distance));
            continue;
        };
        cells[spec.index(t, j, e.direction.index())].add(h);
        report.accepted += 1;
    }
    let values = cells.iter().map(|c| c.mean().unwrap_or(f64::NAN)).collect();
    let observed = cells.iter().map(|c| c.count > 0).collect();
    Ok((
        HeadwayGrid {
            spec: spec.clone(),
            values,
            observed,
            normalized: false,
        },
        report,
    ))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ImputationReport {
    pub filled_cells: usize,
    /// `(distance bin, direction)` columns with no observation at all.
    pub empty_columns: Vec<(usize, Direction)>,
}

pub fn impute_missing(grid: &HeadwayGrid) -> Result<(HeadwayGrid, ImputationReport), GridError> {
    let spec = &grid.spec;
    let (n_t, n_d) = (spec.n_time_bins(), spec.n_distance_bins);
    let observed: Vec<f64> = grid
        .values
        .iter()
        .zip(&grid.observed)
        .filter(|(_, &o)| o)
        .map(|(&v, _)| v)
        .collect();
    if observed.is_empty() {
        return Err(GridError::NoObservations);
    }
    let grid_mean = observed.iter().sum::<f64>() / observed.len() as f64;

    let mut out = grid.clone();
    let mut report = ImputationReport::default();
    for k in 0..spec.n_directions {
        for j in 0..n_d {
            let first = (0..n_t).find(|&t| grid.is_observed(t, j, k));
            let Some(first) = first else {
                for t in 0..n_t {
                    out.values[spec.index(t, j, k)] = grid_mean;
                }
                report.filled_cells += n_t;
                report.empty_columns.push((j, Direction::ALL[k]));
                continue;
            };
            let mut carry = grid.get(first, j, k);
            for t in 0..n_t {
                let idx = spec.index(t, j, k);
                if grid.observed[idx] {
                    carry = grid.values[idx];
                } else {
                    out.values[idx] = carry;
                    report.filled_cells += 1;
                }
            }
        }
    }
    Ok((out, report))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PreprocessReport {
    pub raster: RasterReport,
    pub imputation: ImputationReport,
    pub outside_window: usize,
}

/// Headways, time-window filter, rasterization and imputation for one log.
pub fn preprocess_log(
    log: &TrajectoryLog,
    spec: &GridSpec,
) -> Result<(HeadwayGrid, PreprocessReport), GridError> {
    spec.validate()?;
    let enriched = compute_headways(log);
    let (inside, outside): (Vec<TrajectoryEvent>, Vec<TrajectoryEvent>) = enriched
        .events
        .into_iter()
        .partition(|e| e.timestamp_s >= spec.t_start_s && e.timestamp_s < spec.t_end_s);
    let (raw, raster) = rasterize(&inside, spec)?;
    let (grid, imputation) = impute_missing(&raw)?;
    Ok((
        grid,
        PreprocessReport {
            raster,
            imputation,
            outside_window: outside.len(),
        },
    ))
}

/// Min-max scaling between `h_min` and `h_max` seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub h_min: f64,
    pub h_max: f64,
}

impl Scaler {
    pub fn new(h_min: f64, h_max: f64) -> Result<Self, GridError> {
        if !(h_min < h_max) || !h_min.is_finite() || !h_max.is_finite() {
            return Err(GridError::DegenerateScale { h_min, h_max });
        }
        Ok(Scaler { h_min, h_max })
    }

    pub fn normalize_value(&self, seconds: f64) -> f64 {
        (seconds - self.h_min) / (self.h_max - self.h_min)
    }

    pub fn denormalize_value(&self, scaled: f64) -> f64 {
        scaled * (self.h_max - self.h_min) + self.h_min
    }

    /// Bit-level fingerprint used to catch a model/scaler mix-up.
    pub fn digest(&self) -> u64 {
        let mut h = crate::sim::Fnv64::new();
        h.write_u64(self.h_min.to_bits());
        h.write_u64(self.h_max.to_bits());
        h.finish()
    }
}

pub fn fit_scaler(grids: &[HeadwayGrid]) -> Result<Scaler, GridError> {
    if grids.is_empty() {
        return Err(GridError::EmptyFit);
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for g in grids {
        if g.normalized {
            return Err(GridError::WrongUnits {
                expected: "in seconds",
                actual: "normalized",
            });
        }
        if !g.is_imputed() {
            return Err(GridError::NotImputed);
        }
        for &v in &g.values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    Scaler::new(lo, hi)
}

/// Values above `h_max` map above 1; nothing is clamped.
pub fn normalize(grid: &HeadwayGrid, scaler: &Scaler) -> Result<HeadwayGrid, GridError> {
    if grid.normalized {
        return Err(GridError::WrongUnits {
            expected: "in seconds",
            actual: grid.units(),
        });
    }
    let mut out = grid.clone();
    out.values
        .iter_mut()
        .for_each(|v| *v = scaler.normalize_value(*v));
    out.normalized = true;
    Ok(out)
}

pub fn denormalize(grid: &HeadwayGrid, scaler: &Scaler) -> Result<HeadwayGrid, GridError> {
    if !grid.normalized {
        return Err(GridError::WrongUnits {
            expected: "normalized",
            actual: grid.units(),
        });
    }
    let mut out = grid.clone();
    out.values
        .iter_mut()
        .for_each(|v| *v = scaler.denormalize_value(*v));
    out.normalized = false;
    Ok(out)
}

/// Groups events per cell with an ordered map; test oracle for [`rasterize`].
#[cfg(test)]
pub(crate) fn brute_force_means(
    events: &[TrajectoryEvent],
    spec: &GridSpec,
) -> alloc::collections::BTreeMap<(usize, usize, usize), f64> {
    use alloc::collections::BTreeMap;
    let mut groups: BTreeMap<(usize, usize, usize), Vec<f64>> = BTreeMap::new();
    for e in events {
        let t = ((e.timestamp_s - spec.t_start_s) / spec.delta_t_s) as usize;
        let w = (spec.d_max_ft - spec.d_min_ft) / spec.n_distance_bins as f64;
        let j = (((e.distance_ft - spec.d_min_ft) / w) as usize).min(spec.n_distance_bins - 1);
        groups
            .entry((t, j, e.direction.index()))
            .or_default()
            .push(e.headway_s.unwrap());
    }
    groups
        .into_iter()
        .map(|(k, v)| (k, v.iter().sum::<f64>() / v.len() as f64))
        .collect()
}
