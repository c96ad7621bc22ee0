//! On-disk formats. Every writer renders to memory and lands the file with
//! [`write_atomic`]; floats use shortest round-trip formatting, so values
//! read back bit-identical.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context};
use headway_core::grid::{GridSpec, HeadwayGrid, Scaler};
use headway_core::predict::{MetricsReport, ScatterPoint};
use headway_core::sim::{TrajectoryEvent, TrajectoryLog};
use headway_core::train::TrainHistory;
use headway_core::window::Sample;
use headway_core::{Direction, Tensor};
use serde::{Deserialize, Serialize};

pub const GRID_FORMAT_VERSION: u32 = 1;

/// Writes `bytes` next to `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let name = path.file_name().with_context(|| format!("{} has no file name", path.display()))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let mut f = std::fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
    f.write_all(bytes)?;
    f.sync_all()?;
    drop(f);
    std::fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&text).with_context(|| format!("parsing {}", path.display()))
}

fn csv_bytes<R: Serialize>(rows: impl IntoIterator<Item = R>) -> anyhow::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    Ok(w.into_inner().map_err(|e| e.into_error())?)
}

fn read_csv<R: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<Vec<R>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    r.deserialize()
        .enumerate()
        .map(|(i, row)| row.with_context(|| format!("{}: record {}", path.display(), i + 1)))
        .collect()
}

// ---- trajectories

pub fn trajectory_csv(logs: &[TrajectoryLog]) -> anyhow::Result<Vec<u8>> {
    csv_bytes(logs.iter().flat_map(|l| l.events.iter()))
}

/// Reads a trajectory CSV, grouping rows by replication in file order.
/// The generating config is not stored in the file, so `config_digest` is 0.
pub fn read_trajectories(path: &Path) -> anyhow::Result<Vec<TrajectoryLog>> {
    let events: Vec<TrajectoryEvent> = read_csv(path)?;
    let mut by_rep: BTreeMap<u32, Vec<TrajectoryEvent>> = BTreeMap::new();
    for e in events {
        by_rep.entry(e.replication_id).or_default().push(e);
    }
    Ok(by_rep
        .into_iter()
        .map(|(replication_id, events)| TrajectoryLog { replication_id, events, config_digest: 0 })
        .collect())
}

// ---- grids

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSidecar {
    pub format_version: u32,
    pub spec: GridSpec,
    pub scaler: Scaler,
    pub replications: Vec<u32>,
    pub validation_replications: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GridRow {
    time_bin: usize,
    distance_bin: usize,
    headway_s: f64,
    observed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapRow {
    pub time_bin: usize,
    pub distance_bin: usize,
    pub headway_s: f64,
    pub observed: bool,
    pub source: HeatmapSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeatmapSource {
    History,
    Actual,
    Predicted,
}

pub const SIDECAR_NAME: &str = "grids.json";

pub fn grid_file_name(replication_id: u32, direction: Direction) -> String {
    format!("grid_r{replication_id:03}_{direction}.csv")
}

/// One direction of a grid in seconds.
pub fn grid_csv(grid: &HeadwayGrid, direction: Direction) -> anyhow::Result<Vec<u8>> {
    ensure!(!grid.normalized, "grid files hold seconds, got a normalized grid");
    let k = direction.index();
    let n_d = grid.spec.n_distance_bins;
    csv_bytes((0..grid.n_time_bins()).flat_map(|t| {
        (0..n_d).map(move |j| GridRow {
            time_bin: t,
            distance_bin: j,
            headway_s: grid.get(t, j, k),
            observed: grid.is_observed(t, j, k),
        })
    }))
}

pub fn write_grids(dir: &Path, sidecar: &GridSidecar, grids: &BTreeMap<u32, HeadwayGrid>) -> anyhow::Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for (&id, grid) in grids {
        for dir_k in Direction::ALL {
            let p = dir.join(grid_file_name(id, dir_k));
            write_atomic(&p, &grid_csv(grid, dir_k)?)?;
            written.push(p);
        }
    }
    let p = dir.join(SIDECAR_NAME);
    write_json(&p, sidecar)?;
    written.push(p);
    Ok(written)
}

/// Loads the sidecar and every grid it lists.
pub fn read_grids(dir: &Path) -> anyhow::Result<(GridSidecar, BTreeMap<u32, HeadwayGrid>)> {
    let sidecar: GridSidecar = read_json(&dir.join(SIDECAR_NAME))?;
    ensure!(
        sidecar.format_version == GRID_FORMAT_VERSION,
        "{}: unsupported grid format version {}",
        dir.join(SIDECAR_NAME).display(),
        sidecar.format_version
    );
    sidecar.spec.validate().context("grid sidecar spec")?;
    let spec = &sidecar.spec;
    let mut grids = BTreeMap::new();
    for &id in &sidecar.replications {
        let mut values = vec![f64::NAN; spec.n_cells()];
        let mut observed = vec![false; spec.n_cells()];
        let mut seen = vec![false; spec.n_cells()];
        for direction in Direction::ALL {
            let path = dir.join(grid_file_name(id, direction));
            for row in read_csv::<GridRow>(&path)? {
                if row.time_bin >= spec.n_time_bins() || row.distance_bin >= spec.n_distance_bins {
                    bail!("{}: cell ({}, {}) outside the grid", path.display(), row.time_bin, row.distance_bin);
                }
                if !(row.headway_s.is_finite() && row.headway_s >= 0.0) {
                    bail!("{}: bad headway {} at ({}, {})", path.display(), row.headway_s, row.time_bin, row.distance_bin);
                }
                let idx = spec.index(row.time_bin, row.distance_bin, direction.index());
                ensure!(!seen[idx], "{}: duplicate cell ({}, {})", path.display(), row.time_bin, row.distance_bin);
                seen[idx] = true;
                values[idx] = row.headway_s;
                observed[idx] = row.observed;
            }
        }
        ensure!(seen.iter().all(|&s| s), "replication {id}: grid files do not cover every cell");
        grids.insert(id, HeadwayGrid { spec: spec.clone(), values, observed, normalized: false });
    }
    Ok((sidecar, grids))
}

pub fn heatmap_csv(rows: &[HeatmapRow]) -> anyhow::Result<Vec<u8>> {
    csv_bytes(rows)
}

// ---- metrics, scatter, history

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricCsvRow {
    pub direction: Direction,
    pub horizon_min: u32,
    pub rmse_s: f64,
    pub r2: f64,
    pub n: usize,
}

pub fn metrics_csv(report: &MetricsReport) -> anyhow::Result<Vec<u8>> {
    csv_bytes(report.rows.iter().map(|r| MetricCsvRow {
        direction: r.direction,
        horizon_min: r.horizon_min,
        rmse_s: r.rmse_s,
        r2: r.r2,
        n: r.n,
    }))
}

pub fn read_metrics(path: &Path) -> anyhow::Result<Vec<MetricCsvRow>> {
    read_csv(path)
}

pub fn scatter_csv(points: &[ScatterPoint]) -> anyhow::Result<Vec<u8>> {
    csv_bytes(points)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

pub fn history_csv(history: &TrainHistory) -> anyhow::Result<Vec<u8>> {
    csv_bytes(history.train_loss.iter().zip(&history.val_loss).enumerate().map(|(i, (&train_loss, &val_loss))| {
        HistoryRow { epoch: i + 1, train_loss, val_loss }
    }))
}

pub fn read_history(path: &Path) -> anyhow::Result<Vec<HistoryRow>> {
    read_csv(path)
}

// ---- sample manifest

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub replication_id: u32,
    pub anchor_time_bin: usize,
    pub x_offset: u64,
    pub x_shape: Vec<usize>,
    pub t_future_offset: u64,
    pub t_future_shape: Vec<usize>,
    pub y_offset: u64,
    pub y_shape: Vec<usize>,
}

/// JSON-lines manifest plus the flat little-endian `f32` payload it indexes.
pub fn sample_files(samples: &[Sample]) -> anyhow::Result<(Vec<u8>, Vec<u8>)> {
    let mut manifest = Vec::new();
    let mut payload = Vec::new();
    let push = |t: &Tensor<f32>, payload: &mut Vec<u8>| {
        let off = payload.len() as u64;
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        off
    };
    for s in samples {
        let rec = SampleRecord {
            replication_id: s.replication_id,
            anchor_time_bin: s.anchor_time_bin,
            x_offset: push(&s.x, &mut payload),
            x_shape: s.x.shape().to_vec(),
            t_future_offset: push(&s.t_future, &mut payload),
            t_future_shape: s.t_future.shape().to_vec(),
            y_offset: push(&s.y, &mut payload),
            y_shape: s.y.shape().to_vec(),
        };
        serde_json::to_writer(&mut manifest, &rec)?;
        manifest.push(b'\n');
    }
    Ok((manifest, payload))
}

pub fn read_samples(manifest: &[u8], payload: &[u8]) -> anyhow::Result<Vec<Sample>> {
    let take = |off: u64, shape: &[usize], line: usize| -> anyhow::Result<Tensor<f32>> {
        let n: usize = shape.iter().product();
        let start = usize::try_from(off)?;
        let end = start + 4 * n;
        ensure!(end <= payload.len(), "sample {line}: payload range {start}..{end} beyond {} bytes", payload.len());
        let data = payload[start..end].chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        Ok(Tensor::from_vec(shape, data)?)
    };
    let mut out = Vec::new();
    for (i, line) in manifest.split(|&b| b == b'\n').enumerate().filter(|(_, l)| !l.is_empty()) {
        let rec: SampleRecord = serde_json::from_slice(line).with_context(|| format!("sample manifest line {}", i + 1))?;
        out.push(Sample {
            x: take(rec.x_offset, &rec.x_shape, i + 1)?,
            t_future: take(rec.t_future_offset, &rec.t_future_shape, i + 1)?,
            y: take(rec.y_offset, &rec.y_shape, i + 1)?,
            replication_id: rec.replication_id,
            anchor_time_bin: rec.anchor_time_bin,
        });
    }
    Ok(out)
}
