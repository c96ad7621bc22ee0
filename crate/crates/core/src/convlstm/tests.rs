use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use super::cell::{step, step_backward, InputSlice};
use super::conv::Geom;
use super::*;
use crate::Tensor;

fn rng(seed: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

fn random_tensor(shape: &[usize], scale: f64, r: &mut Xoshiro256PlusPlus) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(
        shape,
        (0..n).map(|_| r.random_range(-scale..scale)).collect(),
    )
    .unwrap()
}

fn random_layer(
    c_in: usize,
    filters: usize,
    r: &mut Xoshiro256PlusPlus,
) -> ConvLstmLayerParams<f64> {
    ConvLstmLayerParams {
        w_x: random_tensor(&[4 * filters, c_in, 3, 1], 0.5, r),
        w_h: random_tensor(&[4 * filters, filters, 3, 1], 0.5, r),
        b: random_tensor(&[4 * filters], 0.5, r),
    }
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Textbook ConvLSTM step with a direct-summation convolution over
/// `[C x N_d x W]` maps.
fn naive_cell(
    x: &Tensor<f64>,
    h: &Tensor<f64>,
    c: &Tensor<f64>,
    p: &ConvLstmLayerParams<f64>,
) -> (Vec<f64>, Vec<f64>) {
    let (c_in, n_d, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let f = h.shape()[0];
    let conv =
        |wt: &Tensor<f64>, inp: &Tensor<f64>, chans: usize, o: usize, d: usize, col: usize| {
            let mut s = 0.0;
            for ch in 0..chans {
                for k in 0..3 {
                    let src = d as isize + k as isize - 1;
                    if src >= 0 && (src as usize) < n_d {
                        s += wt.get(&[o, ch, k, 0]) * inp.get(&[ch, src as usize, col]);
                    }
                }
            }
            s
        };
    let mut h_out = vec![0.0; f * n_d * w];
    let mut c_out = vec![0.0; f * n_d * w];
    for ch in 0..f {
        for d in 0..n_d {
            for col in 0..w {
                let z = |gate: usize| {
                    let o = gate * f + ch;
                    p.b.data()[o] + conv(&p.w_x, x, c_in, o, d, col) + conv(&p.w_h, h, f, o, d, col)
                };
                let i = sig(z(0));
                let fg = sig(z(1));
                let g = z(2).tanh();
                let o = sig(z(3));
                let cn = fg * c.get(&[ch, d, col]) + i * g;
                let idx = (ch * n_d + d) * w + col;
                c_out[idx] = cn;
                h_out[idx] = o * cn.tanh();
            }
        }
    }
    (h_out, c_out)
}

#[test]
fn init_is_deterministic_with_forget_bias_one() {
    let dims = ModelDims {
        n_distance_bins: 8,
        filters: 4,
        kernel_size: 3,
    };
    let a = init_params::<f32>(&dims, 5).unwrap();
    let b = init_params::<f32>(&dims, 5).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, init_params::<f32>(&dims, 6).unwrap());
    for layer in [&a.encoder, &a.decoder] {
        let f = layer.filters();
        let bias = layer.b.data();
        assert!(bias[GATE_FORGET * f..(GATE_FORGET + 1) * f]
            .iter()
            .all(|&v| v == 1.0));
        assert!(bias
            .iter()
            .enumerate()
            .all(|(i, &v)| i / f == GATE_FORGET || v == 0.0));
    }
    assert!(a.head.b.data().iter().all(|&v| v == 0.0));
}

#[test]
fn init_respects_glorot_bound() {
    let dims = ModelDims {
        n_distance_bins: 8,
        filters: 6,
        kernel_size: 3,
    };
    let p = init_params::<f64>(&dims, 1).unwrap();
    // encoder w_x: fan_in = 2 * 3, fan_out = 24 * 3
    assert!((glorot_limit(p.encoder.w_x.shape()) - (6.0f64 / 78.0).sqrt()).abs() < 1e-15);
    for (name, t) in p.blocks() {
        if name.ends_with(".b") {
            continue;
        }
        let limit = glorot_limit(t.shape());
        assert!(t.data().iter().all(|v| v.abs() <= limit), "{name}");
        assert!(t.data().iter().any(|v| v.abs() > limit * 0.5), "{name}");
    }
}

#[test]
fn zero_cell_stays_zero() {
    let p = ConvLstmLayerParams::<f64>::zeros(3, 4, 3);
    let x = Tensor::zeros(&[3, 5, 2]);
    let h = Tensor::zeros(&[4, 5, 2]);
    let (h1, c1) = cell_forward(&x, &h, &h, &p).unwrap();
    assert!(h1.data().iter().chain(c1.data()).all(|&v| v == 0.0));
}

#[test]
fn saturated_forget_gate_keeps_memory() {
    let mut r = rng(2);
    let mut p = ConvLstmLayerParams::<f64>::zeros(2, 3, 3);
    p.gate_bias_mut(GATE_FORGET).fill(30.0);
    let x = random_tensor(&[2, 4, 1], 1.0, &mut r);
    let c_prev = random_tensor(&[3, 4, 1], 2.0, &mut r);
    let (_, c) = cell_forward(&x, &Tensor::zeros(&[3, 4, 1]), &c_prev, &p).unwrap();
    for (a, b) in c.data().iter().zip(c_prev.data()) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn cell_matches_direct_summation() {
    let mut r = rng(17);
    for &(c_in, f, n_d, w) in &[(2, 3, 4, 1), (3, 2, 4, 2), (5, 4, 6, 1)] {
        let p = random_layer(c_in, f, &mut r);
        let x = random_tensor(&[c_in, n_d, w], 1.0, &mut r);
        let h = random_tensor(&[f, n_d, w], 1.0, &mut r);
        let c = random_tensor(&[f, n_d, w], 1.0, &mut r);
        let (h1, c1) = cell_forward(&x, &h, &c, &p).unwrap();
        let (h2, c2) = naive_cell(&x, &h, &c, &p);
        for (a, b) in h1.data().iter().zip(&h2).chain(c1.data().iter().zip(&c2)) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }
}

#[test]
fn cell_rejects_bad_shapes() {
    let p = ConvLstmLayerParams::<f64>::zeros(2, 3, 3);
    let err = cell_forward(
        &Tensor::zeros(&[3, 4, 1]),
        &Tensor::zeros(&[3, 4, 1]),
        &Tensor::zeros(&[3, 4, 1]),
        &p,
    );
    assert!(matches!(err, Err(ModelError::Shape(_))));
    let err = cell_forward(
        &Tensor::zeros(&[2, 4, 1]),
        &Tensor::zeros(&[3, 5, 1]),
        &Tensor::zeros(&[3, 4, 1]),
        &p,
    );
    assert!(matches!(err, Err(ModelError::Shape(_))));
}

fn tiny_dims() -> ModelDims {
    ModelDims {
        n_distance_bins: 4,
        filters: 2,
        kernel_size: 3,
    }
}

fn tiny_problem(seed: u64) -> (ModelParams<f64>, Tensor<f64>, Tensor<f64>, Tensor<f64>) {
    let mut r = rng(seed);
    let mut p = init_params::<f64>(&tiny_dims(), seed).unwrap();
    // non-zero biases so every path carries gradient
    for (_, t) in p.blocks_mut() {
        for v in t.data_mut() {
            *v += r.random_range(-0.3..0.3);
        }
    }
    p.head.b.data_mut().fill(0.4);
    let x = random_tensor(&[3, 4, 2, 1], 1.0, &mut r).map(|v| v.abs());
    let t = random_tensor(&[2, 2, 1], 1.0, &mut r).map(|v| v.abs());
    let y = random_tensor(&[2, 4, 2, 1], 1.0, &mut r).map(|v| v.abs());
    (p, x, t, y)
}

/// Decoder run as a plain cell on the explicitly concatenated input.
#[test]
fn decoder_shortcut_matches_concatenated_input() {
    let (p, x, t, _) = tiny_problem(4);
    let (y, _) = model_forward(&x, &t, &p).unwrap();
    let n = 4;
    let f = p.dims.filters;
    let mut h = Tensor::zeros(&[f, n, 1]);
    let mut c = Tensor::zeros(&[f, n, 1]);
    for l in 0..3 {
        let mut frame = Tensor::zeros(&[2, n, 1]);
        for d in 0..n {
            for k in 0..2 {
                frame.set(&[k, d, 0], x.get(&[l, d, k, 0]));
            }
        }
        (h, c) = cell_forward(&frame, &h, &c, &p.encoder).unwrap();
    }
    let h_enc = h.clone();
    for step in 0..2 {
        let mut input = Tensor::zeros(&[f + 2, n, 1]);
        for d in 0..n {
            for ch in 0..f {
                input.set(&[ch, d, 0], h_enc.get(&[ch, d, 0]));
            }
            for k in 0..2 {
                input.set(&[f + k, d, 0], t.get(&[step, k, 0]));
            }
        }
        (h, c) = cell_forward(&input, &h, &c, &p.decoder).unwrap();
        for d in 0..n {
            for k in 0..2 {
                let mut v = p.head.b.data()[k];
                for ch in 0..f {
                    v += p.head.w.get(&[k, ch]) * h.get(&[ch, d, 0]);
                }
                assert!((y.get(&[step, d, k, 0]) - v.max(0.0)).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn forward_shape_at_production_size() {
    let dims = ModelDims::default();
    let p = init_params::<f32>(&dims, 1).unwrap();
    let mut r = rng(3);
    let x = Tensor::from_vec(
        &[30, 64, 2, 1],
        (0..30 * 128).map(|_| r.random_range(0.0..1.0f32)).collect(),
    )
    .unwrap();
    let t = Tensor::from_vec(
        &[15, 2, 1],
        (0..30).map(|_| r.random_range(0.0..1.0f32)).collect(),
    )
    .unwrap();
    let (y, cache) = model_forward(&x, &t, &p).unwrap();
    assert_eq!(y.shape(), &[15, 64, 2, 1]);
    assert!(y.data().iter().all(|&v| v >= 0.0 && v.is_finite()));
    assert_eq!((cache.lookback(), cache.horizon()), (30, 15));
}

#[test]
fn terminal_plan_changes_output() {
    let (p, x, t, _) = tiny_problem(8);
    let (a, _) = model_forward(&x, &t, &p).unwrap();
    let mut t2 = t.clone();
    t2.set(&[0, 0, 0], t.get(&[0, 0, 0]) + 0.5);
    let (b, _) = model_forward(&x, &t2, &p).unwrap();
    assert!(a
        .data()
        .iter()
        .zip(b.data())
        .any(|(u, v)| (u - v).abs() > 1e-9));
}

#[test]
fn forward_rejects_bad_inputs() {
    let (p, x, t, _) = tiny_problem(1);
    assert!(model_forward(&Tensor::zeros(&[3, 5, 2, 1]), &t, &p).is_err());
    assert!(model_forward(&x, &Tensor::zeros(&[2, 3, 1]), &p).is_err());
    let mut bad = p.clone();
    bad.head.w = Tensor::zeros(&[2, 3]);
    assert_eq!(
        model_forward(&x, &t, &bad).unwrap_err(),
        ModelError::ParamShape("head.w")
    );
}

#[test]
fn mse_values() {
    let y = Tensor::from_vec(&[2], vec![2.0, 4.0]).unwrap();
    let yh = Tensor::from_vec(&[2], vec![1.0, 6.0]).unwrap();
    let (l, g) = mse_loss(&y, &yh).unwrap();
    assert_eq!(l, 2.5);
    assert_eq!(g.data(), &[-1.0, 2.0]);
    assert_eq!(mse_loss(&y, &y).unwrap().0, 0.0);
    assert!(mse_loss(&y, &Tensor::zeros(&[3])).is_err());

    let mut r = rng(12);
    let a = random_tensor(&[7, 5], 3.0, &mut r);
    let b = random_tensor(&[7, 5], 3.0, &mut r);
    let mut brute = 0.0;
    for i in 0..35 {
        let d = a.data()[i] - b.data()[i];
        brute += d * d;
    }
    assert!((mse_loss(&a, &b).unwrap().0 - brute / 35.0).abs() < 1e-12);
}

fn loss_of(p: &ModelParams<f64>, x: &Tensor<f64>, t: &Tensor<f64>, y: &Tensor<f64>) -> f64 {
    let (yh, _) = model_forward(x, t, p).unwrap();
    mse_loss(y, &yh).unwrap().0
}

#[test]
fn zero_cotangent_gives_zero_gradients() {
    let (p, x, t, _) = tiny_problem(3);
    let (yh, cache) = model_forward(&x, &t, &p).unwrap();
    let g = model_backward(&p, &cache, &Tensor::zeros(yh.shape())).unwrap();
    assert!(g.flatten().iter().all(|&v| v == 0.0));
}

#[test]
fn backward_matches_central_differences() {
    for seed in [1u64, 2, 3] {
        let (p, x, t, y) = tiny_problem(seed);
        let (yh, cache) = model_forward(&x, &t, &p).unwrap();
        let (_, dy) = mse_loss(&y, &yh).unwrap();
        let grads = model_backward(&p, &cache, &dy).unwrap();
        let eps = 1e-5;
        let mut worst: f64 = 0.0;
        for (bi, (name, g)) in grads.blocks().iter().enumerate() {
            for i in 0..g.len() {
                let mut plus = p.clone();
                plus.blocks_mut()[bi].1.data_mut()[i] += eps;
                let mut minus = p.clone();
                minus.blocks_mut()[bi].1.data_mut()[i] -= eps;
                let fd = (loss_of(&plus, &x, &t, &y) - loss_of(&minus, &x, &t, &y)) / (2.0 * eps);
                let an = g.data()[i];
                let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-6);
                assert!(rel < 1e-4, "{name}[{i}]: analytic {an} fd {fd}");
                worst = worst.max(rel);
            }
        }
        assert!(worst < 1e-4);
    }
}

#[test]
fn stale_cache_is_rejected() {
    let (p, x, t, _) = tiny_problem(3);
    let (yh, cache) = model_forward(&x, &t, &p).unwrap();
    let other = init_params::<f64>(
        &ModelDims {
            n_distance_bins: 4,
            filters: 3,
            kernel_size: 3,
        },
        1,
    )
    .unwrap();
    assert_eq!(
        model_backward(&other, &cache, &yh).unwrap_err(),
        ModelError::StaleCache
    );
    assert!(model_backward(&p, &cache, &Tensor::zeros(&[1, 4, 2, 1])).is_err());
}

#[test]
fn saturated_forget_bias_has_no_gradient() {
    let mut r = rng(6);
    let mut p = ConvLstmLayerParams::<f64>::zeros(2, 3, 3);
    p.gate_bias_mut(GATE_FORGET).fill(30.0);
    let g = Geom {
        positions: 4,
        width: 1,
        kernel: 3,
    };
    let x = random_tensor(&[2, 4], 1.0, &mut r);
    let c_prev = random_tensor(&[3, 4], 2.0, &mut r);
    let h_prev = vec![0.0; 12];
    let weights = random_tensor(&[3, 4], 1.0, &mut r);
    let slice = InputSlice {
        data: x.data(),
        c_lo: 0,
        c_count: 2,
    };
    let objective = |p: &ConvLstmLayerParams<f64>| {
        let cache = step(p, slice, None, &h_prev, c_prev.data(), &g);
        cache
            .c
            .iter()
            .zip(weights.data())
            .map(|(a, b)| a * b)
            .sum::<f64>()
    };
    let cache = step(&p, slice, None, &h_prev, c_prev.data(), &g);
    let mut grads = ConvLstmLayerParams::zeros(2, 3, 3);
    step_backward(
        &p,
        &mut grads,
        &cache,
        slice,
        &[0.0; 12],
        weights.data(),
        &g,
    );
    let eps = 1e-5;
    for ch in 0..3 {
        let idx = GATE_FORGET * 3 + ch;
        let mut plus = p.clone();
        plus.b.data_mut()[idx] += eps;
        let mut minus = p.clone();
        minus.b.data_mut()[idx] -= eps;
        let fd = (objective(&plus) - objective(&minus)) / (2.0 * eps);
        assert!(grads.b.data()[idx].abs() < 1e-9 && fd.abs() < 1e-6);
    }
}

#[test]
fn adam_null_update() {
    let (mut p, ..) = tiny_problem(2);
    let before = p.clone();
    let mut state = AdamState::new(&p, AdamConfig::default());
    adam_step(&mut p, &before.zeros_like(), &mut state, 1e-3).unwrap();
    assert_eq!(p, before);
    assert_eq!(state.step_count, 1);
}

#[test]
fn adam_first_step_moves_by_lr() {
    let mut param = [0.5f64];
    let (mut m, mut v) = ([0.0], [0.0]);
    adam_update_slice(
        &mut param,
        &[1.0],
        &mut m,
        &mut v,
        1,
        &AdamConfig::default(),
        1e-3,
    );
    // m_hat = v_hat = 1, so the step is lr / (1 + eps)
    assert!((0.5 - param[0] - 1e-3 / (1.0 + 1e-8)).abs() < 1e-15);
}

#[test]
fn adam_rejects_non_finite_gradient() {
    let (mut p, ..) = tiny_problem(2);
    let before = p.clone();
    let mut g = p.zeros_like();
    g.decoder.w_h.data_mut()[3] = f64::NAN;
    let mut state = AdamState::new(&p, AdamConfig::default());
    assert_eq!(
        adam_step(&mut p, &g, &mut state, 1e-3).unwrap_err(),
        ModelError::NonFiniteGradient("decoder.w_h")
    );
    assert_eq!(p, before);
    assert_eq!(state.step_count, 0);
}

#[test]
fn adam_is_deterministic() {
    let run = || {
        let (mut p, x, t, y) = tiny_problem(5);
        let mut state = AdamState::new(&p, AdamConfig::default());
        for _ in 0..5 {
            let (yh, cache) = model_forward(&x, &t, &p).unwrap();
            let (_, dy) = mse_loss(&y, &yh).unwrap();
            let g = model_backward(&p, &cache, &dy).unwrap();
            adam_step(&mut p, &g, &mut state, 1e-2).unwrap();
        }
        p
    };
    let a = run();
    let b = run();
    assert!(a
        .flatten()
        .iter()
        .zip(b.flatten())
        .all(|(u, v)| u.to_bits() == v.to_bits()));
}
