//! Synthetic AVL generator for a two-direction metro line.
//!
//! The line is a double-track corridor between two terminals, cut into fixed
//! signal blocks. Trains leave their terminal on a dispatch schedule, run
//! block by block with a randomly drawn speed, dwell at stations and obey
//! fixed-block signalling: a train may enter a block only when the block is
//! empty and at least `min_separation_s` after the previous entry in that
//! direction. Every block entry is written out as a [`TrajectoryEvent`].
//!
//! A share of southbound trains short-turns at a mid-line block boundary:
//! they leave the southbound track there, spend `turnback_s` on a pocket
//! track and then enter northbound service from the same position, queueing
//! behind northbound trains if the block is busy.
//!
//! Randomness comes from `Xoshiro256PlusPlus` (seeded with SplitMix64 through
//! `seed_from_u64`). Each train gets its own stream, drawn from a master
//! generator in train-id order, so logs depend only on
//! `(config, schedules, seed)`.

use alloc::collections::BinaryHeap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::{Ordering, Reverse};

use rand::{Rng, RngCore, SeedableRng};
use rand_distr::{Distribution, Normal};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::Direction;

pub type SimRng = Xoshiro256PlusPlus;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineConfig {
    pub line_length_ft: f64,
    pub block_length_ft: f64,
    pub station_positions_ft: Vec<f64>,
    /// Position of the terminal northbound trains depart from.
    pub terminal_nb_position_ft: f64,
    /// Position of the terminal southbound trains depart from.
    pub terminal_sb_position_ft: f64,
    /// Must sit on a block boundary strictly between the terminals.
    #[serde(default)]
    pub short_turn_position_ft: Option<f64>,
    #[serde(default)]
    pub short_turn_fraction: f64,
    pub min_separation_s: f64,
    pub dwell_mean_s: f64,
    pub dwell_sd_s: f64,
    #[serde(default = "default_dwell_min")]
    pub dwell_min_s: f64,
    pub run_speed_mean_fps: f64,
    pub run_speed_sd_fps: f64,
    #[serde(default = "default_speed_floor")]
    pub speed_floor_fps: f64,
    #[serde(default = "default_turnback")]
    pub turnback_s: f64,
    pub service_start_s: f64,
    pub service_end_s: f64,
}

fn default_dwell_min() -> f64 {
    10.0
}

fn default_speed_floor() -> f64 {
    10.0
}

fn default_turnback() -> f64 {
    180.0
}

impl Default for LineConfig {
    /// A 140,800 ft line with 128 blocks of 1,100 ft, 33 stations and a
    /// short-turn point 47,300 ft from the northbound terminal. Service runs
    /// 14:00 to 18:00 so the line is warm by 15:30.
    fn default() -> Self {
        let line = 140_800.0;
        let stations = (0..33).map(|i| i as f64 * line / 32.0).collect();
        LineConfig {
            line_length_ft: line,
            block_length_ft: 1_100.0,
            station_positions_ft: stations,
            terminal_nb_position_ft: 0.0,
            terminal_sb_position_ft: line,
            short_turn_position_ft: Some(47_300.0),
            short_turn_fraction: 0.5,
            min_separation_s: 90.0,
            dwell_mean_s: 30.0,
            dwell_sd_s: 12.0,
            dwell_min_s: default_dwell_min(),
            run_speed_mean_fps: 55.0,
            run_speed_sd_fps: 10.0,
            speed_floor_fps: default_speed_floor(),
            turnback_s: default_turnback(),
            service_start_s: 50_400.0,
            service_end_s: 64_800.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("invalid line config: {0}")]
    InvalidConfig(String),
    #[error("invalid {direction} schedule: {reason}")]
    InvalidSchedule {
        direction: Direction,
        reason: String,
    },
    #[error(
        "{direction} departures {first_index} ({first_s} s) and {second_index} ({second_s} s) are closer than the minimum separation"
    )]
    InfeasibleSchedule {
        direction: Direction,
        first_index: usize,
        first_s: f64,
        second_index: usize,
        second_s: f64,
    },
    #[error("invalid dataset request: {0}")]
    InvalidDataset(String),
}

impl LineConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        let finite = [
            self.line_length_ft,
            self.block_length_ft,
            self.terminal_nb_position_ft,
            self.terminal_sb_position_ft,
            self.short_turn_fraction,
            self.min_separation_s,
            self.dwell_mean_s,
            self.dwell_sd_s,
            self.dwell_min_s,
            self.run_speed_mean_fps,
            self.run_speed_sd_fps,
            self.speed_floor_fps,
            self.turnback_s,
            self.service_start_s,
            self.service_end_s,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("all numeric fields must be finite".into());
        }
        if !(self.block_length_ft > 0.0 && self.block_length_ft <= self.line_length_ft) {
            return bad(format!(
                "block_length_ft {} must be in (0, line_length_ft = {}]",
                self.block_length_ft, self.line_length_ft
            ));
        }
        let (nb, sb) = (self.terminal_nb_position_ft, self.terminal_sb_position_ft);
        if !(0.0 <= nb && nb < sb && sb <= self.line_length_ft) {
            return bad(format!(
                "terminals must satisfy 0 <= nb ({nb}) < sb ({sb}) <= line_length"
            ));
        }
        if self.block_length_ft > sb - nb {
            return bad("block_length_ft exceeds the served length".into());
        }
        for (i, w) in self.station_positions_ft.windows(2).enumerate() {
            if !(w[0] < w[1]) {
                return bad(format!(
                    "station positions not strictly increasing at index {}",
                    i + 1
                ));
            }
        }
        if let Some(p) = self
            .station_positions_ft
            .iter()
            .find(|p| !(0.0..=self.line_length_ft).contains(*p))
        {
            return bad(format!("station position {p} outside [0, line_length]"));
        }
        if !(0.0..=1.0).contains(&self.short_turn_fraction) {
            return bad(format!(
                "short_turn_fraction {} outside [0, 1]",
                self.short_turn_fraction
            ));
        }
        if self.short_turn_fraction > 0.0 {
            match self.short_turn_block() {
                Some(_) => {}
                None => {
                    return bad(format!(
                        "short_turn_position_ft {:?} must lie on a block boundary strictly between the terminals",
                        self.short_turn_position_ft
                    ))
                }
            }
        }
        if !(self.min_separation_s > 0.0) {
            return bad("min_separation_s must be positive".into());
        }
        if self.dwell_mean_s < 0.0 || self.dwell_sd_s < 0.0 || self.dwell_min_s < 0.0 {
            return bad("dwell parameters must be non-negative".into());
        }
        if !(self.run_speed_mean_fps > 0.0
            && self.run_speed_sd_fps >= 0.0
            && self.speed_floor_fps > 0.0)
        {
            return bad("speed mean and floor must be positive, sd non-negative".into());
        }
        if self.turnback_s < 0.0 {
            return bad("turnback_s must be non-negative".into());
        }
        if !(self.service_start_s < self.service_end_s) {
            return bad("service_start_s must precede service_end_s".into());
        }
        Ok(())
    }

    /// Length between the two terminals.
    pub fn served_length_ft(&self) -> f64 {
        self.terminal_sb_position_ft - self.terminal_nb_position_ft
    }

    pub fn n_blocks(&self) -> usize {
        let n = libm::ceil(self.served_length_ft() / self.block_length_ft - 1e-9);
        (n as usize).max(1)
    }

    /// Northbound-relative span `[start, end)` of block `b`.
    fn block_span(&self, b: usize) -> (f64, f64) {
        let len = self.block_length_ft;
        let s = self.served_length_ft();
        (b as f64 * len, ((b + 1) as f64 * len).min(s))
    }

    /// Index `k` of the boundary at `k * block_length` where short turns happen.
    pub fn short_turn_block(&self) -> Option<usize> {
        let pos = self.short_turn_position_ft?;
        let rel = (pos - self.terminal_nb_position_ft) / self.block_length_ft;
        let k = libm::round(rel);
        if libm::fabs(rel - k) > 1e-9 || k < 1.0 || k as usize >= self.n_blocks() {
            return None;
        }
        Some(k as usize)
    }

    /// Stable 64-bit fingerprint (FNV-1a over the IEEE bit patterns).
    pub fn digest(&self) -> u64 {
        let mut h = Fnv64::new();
        for v in [
            self.line_length_ft,
            self.block_length_ft,
            self.terminal_nb_position_ft,
            self.terminal_sb_position_ft,
            self.short_turn_position_ft.unwrap_or(f64::NAN),
            self.short_turn_fraction,
            self.min_separation_s,
            self.dwell_mean_s,
            self.dwell_sd_s,
            self.dwell_min_s,
            self.run_speed_mean_fps,
            self.run_speed_sd_fps,
            self.speed_floor_fps,
            self.turnback_s,
            self.service_start_s,
            self.service_end_s,
        ] {
            h.write_u64(v.to_bits());
        }
        h.write_u64(self.station_positions_ft.len() as u64);
        for p in &self.station_positions_ft {
            h.write_u64(p.to_bits());
        }
        h.finish()
    }
}

pub(crate) struct Fnv64(u64);

impl Fnv64 {
    pub(crate) fn new() -> Self {
        Fnv64(0xcbf2_9ce4_8422_2325)
    }

    pub(crate) fn write_u64(&mut self, v: u64) {
        for byte in v.to_le_bytes() {
            self.0 ^= byte as u64;
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }

    pub(crate) fn finish(&self) -> u64 {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchSchedule {
    pub direction: Direction,
    pub departure_times_s: Vec<f64>,
}

impl DispatchSchedule {
    pub fn validate(&self, config: &LineConfig) -> Result<(), SimError> {
        let direction = self.direction;
        let times = &self.departure_times_s;
        if let Some(t) = times
            .iter()
            .find(|t| !t.is_finite() || **t < config.service_start_s || **t > config.service_end_s)
        {
            return Err(SimError::InvalidSchedule {
                direction,
                reason: format!("departure {t} s outside the service window"),
            });
        }
        for (i, w) in times.windows(2).enumerate() {
            if !(w[0] < w[1]) {
                return Err(SimError::InvalidSchedule {
                    direction,
                    reason: format!("departure times not strictly increasing at index {}", i + 1),
                });
            }
            if w[1] - w[0] < config.min_separation_s {
                return Err(SimError::InfeasibleSchedule {
                    direction,
                    first_index: i,
                    first_s: w[0],
                    second_index: i + 1,
                    second_s: w[1],
                });
            }
        }
        Ok(())
    }
}

/// One signal-block activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEvent {
    pub replication_id: u32,
    pub train_id: u32,
    pub direction: Direction,
    pub block_id: u32,
    /// Feet from the departure terminal of `direction`.
    pub distance_ft: f64,
    pub timestamp_s: f64,
    pub headway_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLog {
    pub replication_id: u32,
    pub events: Vec<TrajectoryEvent>,
    pub config_digest: u64,
}

impl TrajectoryLog {
    pub fn with_replication_id(mut self, id: u32) -> Self {
        self.replication_id = id;
        for e in &mut self.events {
            e.replication_id = id;
        }
        self
    }

    /// Lists every violated log invariant; an empty list means the log is
    /// well formed.
    pub fn invariant_violations(&self, config: &LineConfig) -> Vec<String> {
        let mut out = Vec::new();
        let s = config.served_length_ft();
        for (i, e) in self.events.iter().enumerate() {
            if !(0.0..=s).contains(&e.distance_ft) || e.distance_ft > config.line_length_ft {
                out.push(format!(
                    "event {i}: distance {} outside the line",
                    e.distance_ft
                ));
            }
            if e.timestamp_s < config.service_start_s {
                out.push(format!(
                    "event {i}: timestamp {} before service start",
                    e.timestamp_s
                ));
            }
            if let Some(h) = e.headway_s {
                if !(h > 0.0) {
                    out.push(format!("event {i}: non-positive headway {h}"));
                }
            }
        }

        let mut by_train: Vec<&TrajectoryEvent> = self.events.iter().collect();
        by_train.sort_by(|a, b| {
            a.train_id
                .cmp(&b.train_id)
                .then(a.timestamp_s.total_cmp(&b.timestamp_s))
        });
        for w in by_train.windows(2) {
            if w[0].train_id != w[1].train_id {
                continue;
            }
            if !(w[0].timestamp_s < w[1].timestamp_s) {
                out.push(format!(
                    "train {}: timestamps not strictly increasing",
                    w[0].train_id
                ));
            }
            if w[0].direction == w[1].direction && w[1].distance_ft < w[0].distance_ft {
                out.push(format!("train {}: moved backwards", w[0].train_id));
            }
        }

        let mut by_block: Vec<&TrajectoryEvent> = self.events.iter().collect();
        by_block.sort_by(|a, b| {
            (a.direction, a.block_id)
                .cmp(&(b.direction, b.block_id))
                .then(a.timestamp_s.total_cmp(&b.timestamp_s))
        });
        for w in by_block.windows(2) {
            if (w[0].direction, w[0].block_id) != (w[1].direction, w[1].block_id)
                || w[0].train_id == w[1].train_id
            {
                continue;
            }
            if w[1].timestamp_s - w[0].timestamp_s < config.min_separation_s - 1e-9 {
                out.push(format!(
                    "block {} {}: activations {} and {} closer than min separation",
                    w[0].block_id, w[0].direction, w[0].timestamp_s, w[1].timestamp_s
                ));
            }
        }
        out
    }
}

/// Round-robin short-turn selection: the `i`-th southbound train turns when
/// `floor((i + 1) f) > floor(i f)`, so exactly `floor(n f)` of `n` trains turn.
pub fn is_short_turn(index: usize, fraction: f64) -> bool {
    libm::floor((index + 1) as f64 * fraction) > libm::floor(index as f64 * fraction)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Step {
    direction: Direction,
    block: usize,
}

struct TrainPlan {
    id: u32,
    depart_s: f64,
    steps: Vec<Step>,
    /// Index into `steps` of the last southbound block before the turn.
    turn_after: Option<usize>,
}

#[derive(Debug, Clone, Copy)]
enum Action {
    Request,
    TurnRelease,
    Finish,
}

#[derive(Debug, Clone, Copy)]
struct Pending {
    time: f64,
    seq: u64,
    train: usize,
    action: Action,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Pending {}
impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.seq.cmp(&other.seq))
    }
}

struct Track {
    occupant: Vec<Option<usize>>,
    last_entry: Vec<f64>,
    waiters: Vec<Vec<usize>>,
}

impl Track {
    fn new(n: usize) -> Self {
        Track {
            occupant: vec![None; n],
            last_entry: vec![f64::NEG_INFINITY; n],
            waiters: vec![Vec::new(); n],
        }
    }
}

struct Engine<'a> {
    config: &'a LineConfig,
    queue: BinaryHeap<Reverse<Pending>>,
    seq: u64,
    tracks: [Track; 2],
}

impl Engine<'_> {
    fn push(&mut self, time: f64, train: usize, action: Action) {
        self.seq += 1;
        self.queue.push(Reverse(Pending {
            time,
            seq: self.seq,
            train,
            action,
        }));
    }

    fn release(&mut self, at: Step, time: f64) {
        let track = &mut self.tracks[at.direction.index()];
        track.occupant[at.block] = None;
        let waiting = core::mem::take(&mut track.waiters[at.block]);
        for w in waiting {
            self.push(time, w, Action::Request);
        }
    }
}

/// Runs one replication and returns its block-activation log (replication id 0,
/// headways not yet computed).
pub fn simulate_replication(
    config: &LineConfig,
    schedules: &[DispatchSchedule; 2],
    seed: u64,
) -> Result<TrajectoryLog, SimError> {
    config.validate()?;
    for (expected, s) in Direction::ALL.iter().zip(schedules) {
        if s.direction != *expected {
            return Err(SimError::InvalidSchedule {
                direction: s.direction,
                reason: format!("expected the {expected} schedule in this slot"),
            });
        }
        s.validate(config)?;
    }

    let n_blocks = config.n_blocks();
    let turn_block = if config.short_turn_fraction > 0.0 {
        config.short_turn_block()
    } else {
        None
    };
    let nb_route: Vec<Step> = (0..n_blocks)
        .map(|block| Step {
            direction: Direction::Nb,
            block,
        })
        .collect();
    let sb_route: Vec<Step> = (0..n_blocks)
        .rev()
        .map(|block| Step {
            direction: Direction::Sb,
            block,
        })
        .collect();

    let mut plans = Vec::new();
    for &t in &schedules[0].departure_times_s {
        plans.push(TrainPlan {
            id: plans.len() as u32,
            depart_s: t,
            steps: nb_route.clone(),
            turn_after: None,
        });
    }
    for (i, &t) in schedules[1].departure_times_s.iter().enumerate() {
        let id = plans.len() as u32;
        match turn_block {
            Some(k) if is_short_turn(i, config.short_turn_fraction) => {
                let mut steps: Vec<Step> =
                    sb_route.iter().copied().filter(|s| s.block >= k).collect();
                let turn_after = steps.len() - 1;
                steps.extend(nb_route.iter().copied().filter(|s| s.block >= k));
                plans.push(TrainPlan {
                    id,
                    depart_s: t,
                    steps,
                    turn_after: Some(turn_after),
                });
            }
            _ => plans.push(TrainPlan {
                id,
                depart_s: t,
                steps: sb_route.clone(),
                turn_after: None,
            }),
        }
    }

    let mut master = SimRng::seed_from_u64(seed);
    let mut rngs: Vec<SimRng> = plans
        .iter()
        .map(|_| SimRng::seed_from_u64(master.next_u64()))
        .collect();

    let speed = Normal::new(config.run_speed_mean_fps, config.run_speed_sd_fps)
        .map_err(|e| SimError::InvalidConfig(format!("speed distribution: {e}")))?;
    let dwell = Normal::new(config.dwell_mean_s, config.dwell_sd_s)
        .map_err(|e| SimError::InvalidConfig(format!("dwell distribution: {e}")))?;

    let mut stations_per_block = vec![0usize; n_blocks];
    for &p in &config.station_positions_ft {
        let rel = p - config.terminal_nb_position_ft;
        if rel < 0.0 || rel > config.served_length_ft() {
            continue;
        }
        let b = ((rel / config.block_length_ft) as usize).min(n_blocks - 1);
        stations_per_block[b] += 1;
    }

    let mut engine = Engine {
        config,
        queue: BinaryHeap::new(),
        seq: 0,
        tracks: [Track::new(n_blocks), Track::new(n_blocks)],
    };
    let mut progress = vec![0usize; plans.len()];
    let mut events = Vec::new();

    for (i, p) in plans.iter().enumerate() {
        engine.push(p.depart_s, i, Action::Request);
    }

    while let Some(Reverse(ev)) = engine.queue.pop() {
        let plan = &plans[ev.train];
        let step_idx = progress[ev.train];
        match ev.action {
            Action::Request => {
                let step = plan.steps[step_idx];
                let track = &mut engine.tracks[step.direction.index()];
                if track.occupant[step.block].is_some() {
                    track.waiters[step.block].push(ev.train);
                    continue;
                }
                let earliest = track.last_entry[step.block] + engine.config.min_separation_s;
                if ev.time < earliest {
                    engine.push(earliest, ev.train, Action::Request);
                    continue;
                }
                track.occupant[step.block] = Some(ev.train);
                track.last_entry[step.block] = ev.time;

                let (start, end) = config.block_span(step.block);
                let distance = match step.direction {
                    Direction::Nb => start,
                    Direction::Sb => config.served_length_ft() - end,
                };
                events.push(TrajectoryEvent {
                    replication_id: 0,
                    train_id: plan.id,
                    direction: step.direction,
                    block_id: step.block as u32,
                    distance_ft: distance,
                    timestamp_s: ev.time,
                    headway_s: None,
                });

                // Leaving the previous block of the same leg frees it.
                if step_idx > 0 && plan.turn_after != Some(step_idx - 1) {
                    engine.release(plan.steps[step_idx - 1], ev.time);
                }

                let rng = &mut rngs[ev.train];
                let v = speed.sample(rng).max(config.speed_floor_fps);
                let mut run = (end - start) / v;
                for _ in 0..stations_per_block[step.block] {
                    run += draw_dwell(&dwell, config.dwell_min_s, rng);
                }
                let next_time = ev.time + run;
                progress[ev.train] = step_idx + 1;
                if plan.turn_after == Some(step_idx) {
                    engine.push(next_time, ev.train, Action::TurnRelease);
                } else if step_idx + 1 == plan.steps.len() {
                    engine.push(next_time, ev.train, Action::Finish);
                } else {
                    engine.push(next_time, ev.train, Action::Request);
                }
            }
            Action::TurnRelease => {
                engine.release(plan.steps[step_idx - 1], ev.time);
                engine.push(ev.time + config.turnback_s, ev.train, Action::Request);
            }
            Action::Finish => {
                engine.release(plan.steps[step_idx - 1], ev.time);
            }
        }
    }

    Ok(TrajectoryLog {
        replication_id: 0,
        events,
        config_digest: config.digest(),
    })
}

fn draw_dwell(dist: &Normal<f64>, min: f64, rng: &mut SimRng) -> f64 {
    for _ in 0..16 {
        let d = dist.sample(rng);
        if d >= min {
            return d;
        }
    }
    min
}

/// Terminal dispatch pattern for a batch of replications: an even headway
/// perturbed by uniform jitter in `[-jitter_s, jitter_s]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DispatchPlan {
    pub even_headway_s: f64,
    pub jitter_s: f64,
}

impl Default for DispatchPlan {
    fn default() -> Self {
        DispatchPlan { even_headway_s: 300.0, jitter_s: 90.0 }
    }
}

/// Builds both terminal schedules for one replication.
///
/// Departures start at service start and repeat every `even_headway_s`; each
/// gets an independent jitter draw, after which departures are pushed later
/// where needed to keep `min_separation_s` and anything past service end is
/// dropped.
pub fn dispatch_schedules(
    config: &LineConfig,
    plan: &DispatchPlan,
    seed: u64,
) -> Result<[DispatchSchedule; 2], SimError> {
    config.validate()?;
    if !(plan.even_headway_s >= config.min_separation_s) || !plan.even_headway_s.is_finite() {
        return Err(SimError::InvalidDataset(format!(
            "even headway {} s is below the minimum separation {} s",
            plan.even_headway_s, config.min_separation_s
        )));
    }
    if !(plan.jitter_s >= 0.0) || !plan.jitter_s.is_finite() {
        return Err(SimError::InvalidDataset(
            "jitter must be finite and non-negative".into(),
        ));
    }
    let mut rng = SimRng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let n = libm::floor((config.service_end_s - config.service_start_s) / plan.even_headway_s)
        as usize
        + 1;
    let build = |direction, rng: &mut SimRng| {
        let mut times: Vec<f64> = (0..n)
            .map(|i| {
                let base = config.service_start_s + i as f64 * plan.even_headway_s;
                let jitter = if plan.jitter_s > 0.0 {
                    rng.random_range(-plan.jitter_s..=plan.jitter_s)
                } else {
                    0.0
                };
                (base + jitter).max(config.service_start_s)
            })
            .collect();
        times.sort_by(f64::total_cmp);
        for i in 1..times.len() {
            let floor = times[i - 1] + config.min_separation_s;
            if times[i] < floor {
                times[i] = floor;
            }
        }
        times.retain(|t| *t <= config.service_end_s);
        DispatchSchedule {
            direction,
            departure_times_s: times,
        }
    };
    let nb = build(Direction::Nb, &mut rng);
    let sb = build(Direction::Sb, &mut rng);
    Ok([nb, sb])
}

/// Simulates `n_replications` logs; replication `r` uses seed `base_seed + r`
/// for both its dispatch jitter and its run-time noise.
pub fn generate_dataset(
    config: &LineConfig,
    n_replications: usize,
    base_seed: u64,
    plan: &DispatchPlan,
) -> Result<Vec<TrajectoryLog>, SimError> {
    if n_replications == 0 {
        return Err(SimError::InvalidDataset(
            "at least one replication is required".into(),
        ));
    }
    (0..n_replications)
        .map(|r| {
            let seed = base_seed.wrapping_add(r as u64);
            let schedules = dispatch_schedules(config, plan, seed)?;
            Ok(simulate_replication(config, &schedules, seed)?.with_replication_id(r as u32))
        })
        .collect()
}
