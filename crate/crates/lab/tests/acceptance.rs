//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Runs as a plain binary (`harness = false`). Positional arguments filter
//! criteria by substring. `HEADWAY_ACCEPTANCE_FULL=1` trains the desk-scale
//! model on every training anchor for the full epoch budget instead of the
//! reduced default.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use headway_core::convlstm::conv::{conv_accumulate, conv_backward_input, conv_backward_weight, Geom, WeightView};
use headway_core::convlstm::{init_params, model_backward, model_forward, mse_loss, ModelDims, ModelParams};
use headway_core::grid::{denormalize, normalize, rasterize, GridSpec};
use headway_core::predict::{evaluate, evaluate_persistence, predict_recursive, predict_single, rmse_r2, MetricsReport, TrainedModel};
use headway_core::sim::TrajectoryEvent;
use headway_core::train::{train_from, TrainConfig, TrainHistory};
use headway_core::window::{SampleRole, SampleSet};
use headway_core::{Direction, Tensor};
use headway_lab::checkpoint::{decode, encode, Checkpoint};
use headway_lab::config::{LabConfig, Stage};
use headway_lab::formats::trajectory_csv;
use headway_lab::pipeline::{preprocess, simulate, train_model, PreparedData};
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

type Outcome = Result<String, String>;

macro_rules! check {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

struct Runner {
    filters: Vec<String>,
    failed: Vec<&'static str>,
    ran: usize,
}

impl Runner {
    fn selected(&self, name: &str) -> bool {
        self.filters.is_empty() || self.filters.iter().any(|p| name.contains(p.as_str()))
    }

    fn run(&mut self, name: &'static str, f: impl FnOnce() -> Outcome) {
        if !self.selected(name) {
            return;
        }
        self.ran += 1;
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS  {name}: {detail} [{secs:.1} s]"),
            Err(detail) => {
                println!("FAIL  {name}: {detail} [{secs:.1} s]");
                self.failed.push(name);
            }
        }
    }
}

fn rng(seed: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

fn random_tensor(shape: &[usize], lo: f64, hi: f64, r: &mut Xoshiro256PlusPlus) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| r.random_range(lo..hi)).collect()).unwrap()
}

fn rasterization_oracle() -> Outcome {
    let start = Instant::now();
    let spec = GridSpec::default();
    let mut r = rng(11);
    let events: Vec<TrajectoryEvent> = (0..1000)
        .map(|i| TrajectoryEvent {
            replication_id: 0,
            train_id: i % 37,
            direction: if r.random_bool(0.5) { Direction::Nb } else { Direction::Sb },
            block_id: 0,
            distance_ft: r.random_range(-2_000.0..spec.d_max_ft + 2_000.0),
            // a narrow time band so many cells collect several events
            timestamp_s: r.random_range(spec.t_start_s - 120.0..spec.t_start_s + 900.0),
            headway_s: if r.random_bool(0.05) { None } else { Some(r.random_range(60.0..900.0)) },
        })
        .collect();
    let (grid, report) = rasterize(&events, &spec).map_err(|e| e.to_string())?;
    let w = spec.bin_width_ft();
    let last = spec.n_distance_bins - 1;
    let (mut checked, mut multi, mut worst) = (0usize, 0usize, 0.0f64);
    for t in 0..spec.n_time_bins() {
        let (t0, t1) = (spec.t_start_s + t as f64 * spec.delta_t_s, spec.t_start_s + (t + 1) as f64 * spec.delta_t_s);
        for j in 0..spec.n_distance_bins {
            let (d0, d1) = (spec.d_min_ft + j as f64 * w, spec.d_min_ft + (j + 1) as f64 * w);
            for dir in Direction::ALL {
                let members: Vec<f64> = events
                    .iter()
                    .filter(|e| e.direction == dir && e.timestamp_s >= t0 && e.timestamp_s < t1)
                    .filter(|e| e.distance_ft >= d0 && (e.distance_ft < d1 || (j == last && e.distance_ft <= spec.d_max_ft)))
                    .filter_map(|e| e.headway_s)
                    .collect();
                let got = grid.get(t, j, dir.index());
                check!(grid.is_observed(t, j, dir.index()) == !members.is_empty(), "observed flag differs at ({t},{j},{dir})");
                if members.is_empty() {
                    check!(got.is_nan(), "cell ({t},{j},{dir}) should be empty, holds {got}");
                    continue;
                }
                let mean = members.iter().sum::<f64>() / members.len() as f64;
                worst = worst.max((got - mean).abs());
                checked += 1;
                multi += (members.len() > 1) as usize;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check!(worst <= 1e-9, "max deviation {worst:e} > 1e-9");
    check!(secs < 5.0, "took {secs:.2} s, budget 5 s");
    Ok(format!(
        "{} accepted, {} rejected, {checked} cells ({multi} pooled) match, max |diff| {worst:.1e}",
        report.accepted,
        report.rejected.len()
    ))
}

fn loss_of(p: &ModelParams<f64>, x: &Tensor<f64>, t: &Tensor<f64>, y: &Tensor<f64>) -> f64 {
    let (yh, _) = model_forward(x, t, p).unwrap();
    mse_loss(y, &yh).unwrap().0
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let dims = ModelDims { n_distance_bins: 4, filters: 2, kernel_size: 3 };
    let mut r = rng(5);
    let mut p = init_params::<f64>(&dims, 5).map_err(|e| e.to_string())?;
    // non-zero biases so every path carries gradient
    for (_, t) in p.blocks_mut() {
        for v in t.data_mut() {
            *v += r.random_range(-0.3..0.3);
        }
    }
    let x = random_tensor(&[3, 4, 2, 1], 0.0, 1.0, &mut r);
    let t = random_tensor(&[2, 2, 1], 0.0, 1.0, &mut r);
    let y = random_tensor(&[2, 4, 2, 1], 0.0, 1.0, &mut r);
    let (yh, cache) = model_forward(&x, &t, &p).map_err(|e| e.to_string())?;
    let (_, dy) = mse_loss(&y, &yh).map_err(|e| e.to_string())?;
    let grads = model_backward(&p, &cache, &dy).map_err(|e| e.to_string())?;
    let eps = 1e-5;
    let mut per_block = Vec::new();
    let mut worst = 0.0f64;
    for (bi, (name, g)) in grads.blocks().iter().enumerate() {
        let mut block_worst = 0.0f64;
        for i in 0..g.len() {
            let mut plus = p.clone();
            plus.blocks_mut()[bi].1.data_mut()[i] += eps;
            let mut minus = p.clone();
            minus.blocks_mut()[bi].1.data_mut()[i] -= eps;
            let fd = (loss_of(&plus, &x, &t, &y) - loss_of(&minus, &x, &t, &y)) / (2.0 * eps);
            let an = g.data()[i];
            block_worst = block_worst.max((an - fd).abs() / an.abs().max(fd.abs()).max(1e-8));
        }
        per_block.push(format!("{name} {block_worst:.1e}"));
        worst = worst.max(block_worst);
    }
    let secs = start.elapsed().as_secs_f64();
    check!(worst < 1e-4, "max relative error {worst:e}: {}", per_block.join(", "));
    check!(secs < 60.0, "took {secs:.1} s, budget 60 s");
    Ok(format!("{} parameters, max relative error {worst:.1e}", p.n_params()))
}

fn conv_and_metric_oracles() -> Outcome {
    let mut r = rng(3);
    let (n_d, width, k, c_out, c_total, c_lo, c_count) = (9, 2, 3, 5, 7, 2, 4);
    let g = Geom { positions: n_d * width, width, kernel: k };
    let n = g.positions;
    let w = random_tensor(&[c_out, c_total, k], -1.0, 1.0, &mut r);
    let inp = random_tensor(&[c_count, n], -1.0, 1.0, &mut r);
    let d_out = random_tensor(&[c_out, n], -1.0, 1.0, &mut r);
    let view = WeightView { w: w.data(), c_out, c_total, c_lo };
    // tap k reads distance d + k - 1 in the same column
    let src = |pos: usize, tap: usize| -> Option<usize> {
        let (d, col) = (pos / width, pos % width);
        let s = d as isize + tap as isize - (k / 2) as isize;
        (0..n_d as isize).contains(&s).then(|| s as usize * width + col)
    };
    let mut worst = 0.0f64;

    let mut out = vec![0.25; c_out * n];
    conv_accumulate(&mut out, view, inp.data(), c_count, &g);
    for o in 0..c_out {
        for pos in 0..n {
            let mut s = 0.25;
            for c in 0..c_count {
                for tap in 0..k {
                    if let Some(q) = src(pos, tap) {
                        s += w.get(&[o, c_lo + c, tap]) * inp.get(&[c, q]);
                    }
                }
            }
            worst = worst.max((out[o * n + pos] - s).abs());
        }
    }

    let mut d_in = vec![0.0; c_count * n];
    conv_backward_input(&mut d_in, view, d_out.data(), c_count, &g);
    let mut want_in = vec![0.0; c_count * n];
    let mut want_w = vec![0.0; c_out * c_total * k];
    for o in 0..c_out {
        for pos in 0..n {
            for c in 0..c_count {
                for tap in 0..k {
                    if let Some(q) = src(pos, tap) {
                        want_in[c * n + q] += w.get(&[o, c_lo + c, tap]) * d_out.get(&[o, pos]);
                        want_w[(o * c_total + c_lo + c) * k + tap] += d_out.get(&[o, pos]) * inp.get(&[c, q]);
                    }
                }
            }
        }
    }
    let mut d_w = vec![0.0; c_out * c_total * k];
    conv_backward_weight(&mut d_w, c_out, c_total, c_lo, inp.data(), c_count, d_out.data(), &g);
    for (a, b) in d_in.iter().zip(&want_in).chain(d_w.iter().zip(&want_w)) {
        worst = worst.max((a - b).abs());
    }
    check!(worst <= 1e-12, "convolution deviates from direct summation by {worst:e}");

    let (rmse, r2) = rmse_r2(&[2.0, 4.0, 6.0, 8.0], &[3.0, 3.0, 7.0, 7.0]).ok_or("no metric")?;
    check!((rmse - 1.0).abs() <= 1e-9 && (r2 - 0.8).abs() <= 1e-9, "toy case gave rmse {rmse}, r2 {r2}");
    Ok(format!("conv forward/backward max |diff| {worst:.1e}; toy rmse {rmse}, R² {r2}"))
}

fn overfit_capacity() -> Outcome {
    let mut cfg = LabConfig::default();
    cfg.replications = 1;
    let (data, _) = preprocess(&simulate(&cfg).map_err(|e| e.to_string())?, &cfg).map_err(|e| e.to_string())?;
    let samples: Vec<_> = data.samples(&cfg.window, &[0], 5).map_err(|e| e.to_string())?.into_iter().take(20).collect();
    check!(samples.len() == 20, "only {} samples", samples.len());
    let set = SampleSet { samples, role: SampleRole::Train };
    let tc = TrainConfig { epochs: 2000, batch_size: 4, learning_rate: 3e-3, patience: 2000, seed: 1, ..TrainConfig::default() };
    let params = init_params(&cfg.model, cfg.stage_seed(Stage::Init)).map_err(|e| e.to_string())?;
    let mut reached = None;
    let (_, history) = train_from(params, &set, &set, &tc, &mut |rep| {
        if rep.val_loss < 1e-3 {
            reached = Some(rep.epoch);
        }
        if rep.epoch % 100 == 0 {
            eprintln!("  overfit epoch {}: train MSE {:.3e}", rep.epoch, rep.val_loss);
        }
        reached.is_none()
    })
    .map_err(|e| e.to_string())?;
    let best = history.best_val_loss().unwrap_or(f64::INFINITY);
    match reached {
        Some(epoch) => Ok(format!("train MSE {best:.2e} < 1e-3 after {epoch} epochs (batch 4, lr {})", tc.learning_rate)),
        None => Err(format!("train MSE still {best:.2e} after {} epochs", history.epochs_run())),
    }
}

const DESK_CRITERIA: [&str; 4] = [
    "desk-scale (a) 15-min RMSE beats persistence by >= 20%",
    "desk-scale (b) RMSE non-decreasing 15→60 min within 5%",
    "desk-scale (c) R² at 15 min above R² at 60 min",
    "terminal-channel sensitivity (120 s plan change moves a cell > 1 s)",
];

struct Desk {
    cfg: LabConfig,
    data: PreparedData,
    model: TrainedModel,
    history: TrainHistory,
}

fn desk_config() -> (LabConfig, &'static str) {
    let mut cfg = LabConfig::default();
    if std::env::var("HEADWAY_ACCEPTANCE_FULL").is_ok_and(|v| v == "1") {
        (cfg, "full")
    } else {
        // every validation anchor, every second training anchor, 15 epochs
        cfg.split.anchor_stride = 2;
        cfg.train.epochs = 15;
        (cfg, "reduced")
    }
}

fn train_desk() -> Result<Desk, String> {
    let (cfg, _) = desk_config();
    let logs = simulate(&cfg).map_err(|e| e.to_string())?;
    let (data, _) = preprocess(&logs, &cfg).map_err(|e| e.to_string())?;
    let (model, history) = train_model(&data, &cfg, &mut |_| true).map_err(|e| e.to_string())?;
    Ok(Desk { cfg, data, model, history })
}

fn validation_metrics(d: &Desk) -> Result<(MetricsReport, MetricsReport, usize), String> {
    let max_h = *d.cfg.horizons_min.iter().max().unwrap() as usize;
    let samples = d
        .data
        .evaluation_samples(&d.model.window, &d.data.sidecar.validation_replications, max_h)
        .map_err(|e| e.to_string())?;
    let m = evaluate(&d.model, &d.model.scaler, &samples, &d.cfg.horizons_min).map_err(|e| e.to_string())?;
    let p = evaluate_persistence(&d.model, &samples, &d.cfg.horizons_min).map_err(|e| e.to_string())?;
    Ok((m, p, samples.len()))
}

fn desk_scale(d: &Desk, m: &MetricsReport, p: &MetricsReport, n: usize) -> Vec<(&'static str, Outcome)> {
    let hs = &d.cfg.horizons_min;
    let row = |r: &MetricsReport, dir, h| r.get(dir, h).cloned().ok_or(format!("missing {dir} {h} min"));
    let a = (|| {
        let mut parts = Vec::new();
        for dir in Direction::ALL {
            let (mm, pp) = (row(m, dir, hs[0])?, row(p, dir, hs[0])?);
            let gain = 1.0 - mm.rmse_s / pp.rmse_s;
            parts.push(format!("{dir} {:.1} s vs persistence {:.1} s ({:.0}% better)", mm.rmse_s, pp.rmse_s, 100.0 * gain));
            check!(gain >= 0.2, "{}", parts.join("; "));
        }
        Ok(format!("{}; {n} validation windows, {} epochs", parts.join("; "), d.history.epochs_run()))
    })();
    let b = (|| {
        let mut parts = Vec::new();
        let mut ok = true;
        for dir in Direction::ALL {
            let rm: Vec<f64> = hs.iter().map(|&h| row(m, dir, h).map(|r| r.rmse_s)).collect::<Result<_, _>>()?;
            ok &= rm.windows(2).all(|w| w[1] >= 0.95 * w[0]);
            parts.push(format!("{dir} {}", rm.iter().map(|v| format!("{v:.1}")).collect::<Vec<_>>().join(" → ")));
        }
        let text = format!("RMSE (s) at {hs:?} min: {}", parts.join("; "));
        if ok { Ok(text) } else { Err(text) }
    })();
    let c = (|| {
        let mut parts = Vec::new();
        let mut ok = true;
        let last = *hs.last().unwrap();
        for dir in Direction::ALL {
            let (r15, r60) = (row(m, dir, hs[0])?.r2, row(m, dir, last)?.r2);
            ok &= r15 > r60;
            parts.push(format!("{dir} {r15:.3} → {r60:.3}"));
        }
        let text = format!("R² {} → {last} min: {}", hs[0], parts.join("; "));
        if ok { Ok(text) } else { Err(text) }
    })();
    DESK_CRITERIA[..3].iter().copied().zip([a, b, c]).collect()
}

fn terminal_sensitivity(d: &Desk) -> Outcome {
    let id = d.data.sidecar.validation_replications[0];
    let s = &d.data.samples(&d.model.window, &[id], 1).map_err(|e| e.to_string())?[40];
    let base = predict_single(&d.model, &d.model.scaler, &s.x, &s.t_future, s.anchor_time_bin).map_err(|e| e.to_string())?;
    let mut changed = s.t_future.clone();
    let sc = &d.model.scaler;
    let entry = sc.denormalize_value(changed.get(&[0, 0, 0]) as f64) + 120.0;
    changed.set(&[0, 0, 0], sc.normalize_value(entry) as f32);
    let alt = predict_single(&d.model, sc, &s.x, &changed, s.anchor_time_bin).map_err(|e| e.to_string())?;
    let mut max = 0.0f32;
    let mut at = (0, 0, 0);
    for b in 0..d.model.horizon() {
        for j in 0..d.model.n_distance_bins() {
            for k in 0..2 {
                let diff = (base.y_hat.get(&[b, j, k, 0]) - alt.y_hat.get(&[b, j, k, 0])).abs();
                if diff > max {
                    (max, at) = (diff, (b, j, k));
                }
            }
        }
    }
    check!(max > 1.0, "largest change {max:.3} s");
    Ok(format!(
        "+120 s on NB entry 0 (replication {id}, anchor {}) moves cell (bin {}, distance {}, {}) by {max:.1} s",
        s.anchor_time_bin,
        at.0,
        at.1,
        Direction::ALL[at.2]
    ))
}

fn determinism(d: Option<&Desk>) -> Outcome {
    let cfg = common::tiny_config();
    let a = trajectory_csv(&simulate(&cfg).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let b = trajectory_csv(&simulate(&cfg).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    check!(a == b, "simulation CSVs differ");

    let mut tcfg = cfg.clone();
    tcfg.train.epochs = 3;
    let (data, _) = preprocess(&simulate(&tcfg).map_err(|e| e.to_string())?, &tcfg).map_err(|e| e.to_string())?;
    let run = || train_model(&data, &tcfg, &mut |_| true).map_err(|e| e.to_string());
    let ((m1, h1), (m2, h2)) = (run()?, run()?);
    let bits = |h: &TrainHistory| h.train_loss.iter().chain(&h.val_loss).map(|v| v.to_bits()).collect::<Vec<_>>();
    check!(bits(&h1) == bits(&h2) && h1.best_epoch == h2.best_epoch, "training histories differ");
    check!(m1.params == m2.params, "trained parameters differ");

    let mut worst = 0.0f64;
    for g in data.grids.values() {
        let back = denormalize(&normalize(g, &data.sidecar.scaler).map_err(|e| e.to_string())?, &data.sidecar.scaler)
            .map_err(|e| e.to_string())?;
        for (x, y) in g.values.iter().zip(&back.values) {
            worst = worst.max((x - y).abs());
        }
    }
    check!(worst <= 1e-9, "normalize/denormalize round trip off by {worst:e}");

    let (model, data, cfg) = match d {
        Some(d) => (d.model.clone(), &d.data, &d.cfg),
        None => (m1, &data, &tcfg),
    };
    let ck = Checkpoint {
        model,
        grid: cfg.grid.clone(),
        seed: cfg.seed,
        history: h1,
        validation_replications: data.sidecar.validation_replications.clone(),
    };
    let (_, back) = decode(&encode(&ck).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let samples = data.samples(&ck.model.window, &data.sidecar.validation_replications, 7).map_err(|e| e.to_string())?;
    for s in &samples {
        let p1 = predict_single(&ck.model, &ck.model.scaler, &s.x, &s.t_future, s.anchor_time_bin).map_err(|e| e.to_string())?;
        let p2 = predict_single(&back.model, &back.model.scaler, &s.x, &s.t_future, s.anchor_time_bin).map_err(|e| e.to_string())?;
        check!(p1.y_hat.data().iter().map(|v| v.to_bits()).eq(p2.y_hat.data().iter().map(|v| v.to_bits())), "checkpoint changes predictions");
    }
    Ok(format!(
        "simulation CSV ({} bytes) and 3-epoch histories bit-identical; round trip max |diff| {worst:.1e}; {} predictions bit-identical after checkpoint reload",
        a.len(),
        samples.len()
    ))
}

fn recursive_base_case(d: Option<&Desk>) -> Outcome {
    let (model, data) = match d {
        Some(d) => (d.model.clone(), d.data.clone()),
        None => {
            let mut cfg = LabConfig::default();
            cfg.replications = 2;
            let (data, _) = preprocess(&simulate(&cfg).map_err(|e| e.to_string())?, &cfg).map_err(|e| e.to_string())?;
            let params = init_params(&cfg.model, 9).map_err(|e| e.to_string())?;
            let model = TrainedModel { params, scaler: data.sidecar.scaler, window: cfg.window.clone(), delta_t_s: 60.0 };
            (model, data)
        }
    };
    let ids = data.sidecar.replications.clone();
    let samples = data.samples(&model.window, &ids[..1], 9).map_err(|e| e.to_string())?;
    for s in &samples {
        let a = predict_single(&model, &model.scaler, &s.x, &s.t_future, s.anchor_time_bin).map_err(|e| e.to_string())?;
        let b = predict_recursive(&model, &model.scaler, &s.x, &s.t_future, 1, s.anchor_time_bin).map_err(|e| e.to_string())?;
        check!(
            a.y_hat.data().iter().map(|v| v.to_bits()).eq(b.y_hat.data().iter().map(|v| v.to_bits())) && a == b,
            "anchor {} differs",
            s.anchor_time_bin
        );
    }
    Ok(format!("{} windows bit-identical", samples.len()))
}

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut r = Runner { filters, failed: Vec::new(), ran: 0 };
    r.run("rasterization oracle (1000 events, 1e-9, < 5 s)", rasterization_oracle);
    r.run("gradient check (tiny f64 model, eps 1e-5, rel < 1e-4, < 60 s)", gradient_check);
    r.run("convolution (1e-12) and metric (1e-9) oracles", conv_and_metric_oracles);
    r.run("overfit capacity (20 samples, <= 2000 epochs, MSE < 1e-3)", overfit_capacity);

    let desk = if DESK_CRITERIA.iter().any(|n| r.selected(n)) {
        let (_, mode) = desk_config();
        println!("training desk-scale model ({mode} budget)...");
        let start = Instant::now();
        match train_desk() {
            Ok(d) => {
                println!("trained in {:.0} s, best epoch {}", start.elapsed().as_secs_f64(), d.history.best_epoch);
                Some(d)
            }
            Err(e) => {
                println!("desk-scale training failed: {e}");
                None
            }
        }
    } else {
        None
    };

    match desk.as_ref().map(|d| (d, validation_metrics(d))) {
        Some((d, Ok((m, p, n)))) => {
            for (name, outcome) in desk_scale(d, &m, &p, n) {
                r.run(name, move || outcome);
            }
        }
        Some((_, Err(e))) => {
            for name in &DESK_CRITERIA[..3] {
                r.run(name, || Err(e.clone()));
            }
        }
        None => {
            for name in &DESK_CRITERIA[..3] {
                r.run(name, || Err("no trained model".into()));
            }
        }
    }
    r.run(DESK_CRITERIA[3], || match desk.as_ref() {
        Some(d) => terminal_sensitivity(d),
        None => Err("no trained model".into()),
    });
    r.run("determinism and round trips", || determinism(desk.as_ref()));
    r.run("recursive base case (1 round == single pass, bit-for-bit)", || recursive_base_case(desk.as_ref()));

    println!("{} criteria run, {} failed", r.ran, r.failed.len());
    if !r.failed.is_empty() {
        std::process::exit(1);
    }
}
