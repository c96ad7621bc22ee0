//! Encoder/decoder wiring.
//!
//! * The encoder cell reads the `L` history frames with the two directions
//!   as input channels over an `[N_d x 1]` grid.
//! * Its final `(h, c)` seeds the decoder. At every future step the decoder
//!   input is the encoder's final `h` stacked with the planned terminal
//!   headway of each direction, broadcast along distance.
//! * A 1x1 convolution with ReLU maps each decoder `h` to one channel per
//!   direction.
//!
//! The encoder-state part of the decoder input is identical at every step, so
//! its gate contribution is computed once and its gradient is accumulated
//! over all steps before being propagated.

use alloc::vec;
use alloc::vec::Vec;

use super::cell::{step, step_backward, CellCache, InputSlice};
use super::conv::{
    conv_accumulate, conv_backward_input, conv_backward_weight, row_sum, Geom, WeightView,
};
use super::params::{ModelDims, ModelParams};
use super::ModelError;
use crate::{Real, Tensor, N_DIRECTIONS};

/// Intermediates of one [`model_forward`] call.
#[derive(Debug, Clone)]
pub struct ModelCache<T> {
    dims: ModelDims,
    geom: Geom,
    frames: Vec<Vec<T>>,
    terminal: Vec<Vec<T>>,
    encoder: Vec<CellCache<T>>,
    decoder: Vec<CellCache<T>>,
    head_pre: Vec<Vec<T>>,
}

impl<T> ModelCache<T> {
    pub fn lookback(&self) -> usize {
        self.frames.len()
    }

    pub fn horizon(&self) -> usize {
        self.terminal.len()
    }
}

fn geom(dims: &ModelDims) -> Geom {
    Geom {
        positions: dims.n_distance_bins,
        width: 1,
        kernel: dims.kernel_size,
    }
}

fn check_params<T: Real>(params: &ModelParams<T>) -> Result<(), ModelError> {
    let fresh = ModelParams::<T>::zeros(&params.dims);
    for ((name, a), (_, b)) in params.blocks().iter().zip(fresh.blocks().iter()) {
        if a.shape() != b.shape() {
            return Err(ModelError::ParamShape(name));
        }
    }
    Ok(())
}

/// Runs the model on one sample.
///
/// `x` is `[L x N_d x N_dir x 1]`, `t_future` is `[F x N_dir x 1]`; the
/// result is `[F x N_d x N_dir x 1]`.
pub fn model_forward<T: Real>(
    x: &Tensor<T>,
    t_future: &Tensor<T>,
    params: &ModelParams<T>,
) -> Result<(Tensor<T>, ModelCache<T>), ModelError> {
    let dims = &params.dims;
    dims.validate()?;
    check_params(params)?;
    let n = dims.n_distance_bins;
    let xs = x.shape();
    if xs.len() != 4 || xs[0] == 0 || xs[1] != n || xs[2] != N_DIRECTIONS || xs[3] != 1 {
        return Err(ModelError::Shape("x must be [L x N_d x N_dir x 1]"));
    }
    let ts = t_future.shape();
    if ts.len() != 3 || ts[0] == 0 || ts[1] != N_DIRECTIONS || ts[2] != 1 {
        return Err(ModelError::Shape("t_future must be [F x N_dir x 1]"));
    }
    let (l, f_steps, filters) = (xs[0], ts[0], dims.filters);
    let g = geom(dims);

    let frames: Vec<Vec<T>> = (0..l)
        .map(|t| {
            let src = x.outer(t);
            let mut frame = vec![T::zero(); N_DIRECTIONS * n];
            for d in 0..n {
                for k in 0..N_DIRECTIONS {
                    frame[k * n + d] = src[d * N_DIRECTIONS + k];
                }
            }
            frame
        })
        .collect();
    let terminal: Vec<Vec<T>> = (0..f_steps)
        .map(|t| {
            let src = t_future.outer(t);
            let mut ch = vec![T::zero(); N_DIRECTIONS * n];
            for k in 0..N_DIRECTIONS {
                ch[k * n..(k + 1) * n].fill(src[k]);
            }
            ch
        })
        .collect();

    let mut h = vec![T::zero(); filters * n];
    let mut c = vec![T::zero(); filters * n];
    let mut encoder = Vec::with_capacity(l);
    for frame in &frames {
        let cache = step(
            &params.encoder,
            InputSlice {
                data: frame,
                c_lo: 0,
                c_count: N_DIRECTIONS,
            },
            None,
            &h,
            &c,
            &g,
        );
        h.clone_from(&cache.h);
        c.clone_from(&cache.c);
        encoder.push(cache);
    }
    let h_enc = h.clone();

    let dec_w = &params.decoder.w_x;
    let mut static_z = vec![T::zero(); 4 * filters * n];
    conv_accumulate(
        &mut static_z,
        WeightView {
            w: dec_w.data(),
            c_out: 4 * filters,
            c_total: dec_w.shape()[1],
            c_lo: 0,
        },
        &h_enc,
        filters,
        &g,
    );

    let hw = params.head.w.data();
    let hb = params.head.b.data();
    let mut y = vec![T::zero(); f_steps * n * N_DIRECTIONS];
    let mut decoder = Vec::with_capacity(f_steps);
    let mut head_pre = Vec::with_capacity(f_steps);
    for (t, term) in terminal.iter().enumerate() {
        let cache = step(
            &params.decoder,
            InputSlice {
                data: term,
                c_lo: filters,
                c_count: N_DIRECTIONS,
            },
            Some(&static_z),
            &h,
            &c,
            &g,
        );
        h.clone_from(&cache.h);
        c.clone_from(&cache.c);

        let mut pre = vec![T::zero(); N_DIRECTIONS * n];
        for k in 0..N_DIRECTIONS {
            let row = &mut pre[k * n..(k + 1) * n];
            row.fill(hb[k]);
            for ch in 0..filters {
                let w = hw[k * filters + ch];
                for (o, &v) in row.iter_mut().zip(&h[ch * n..(ch + 1) * n]) {
                    *o = *o + w * v;
                }
            }
            for d in 0..n {
                let v = row[d];
                y[(t * n + d) * N_DIRECTIONS + k] = if v > T::zero() { v } else { T::zero() };
            }
        }
        head_pre.push(pre);
        decoder.push(cache);
    }

    let y = Tensor::from_vec(&[f_steps, n, N_DIRECTIONS, 1], y).expect("output shape");
    Ok((
        y,
        ModelCache {
            dims: dims.clone(),
            geom: g,
            frames,
            terminal,
            encoder,
            decoder,
            head_pre,
        },
    ))
}

/// Gradients of `<d_y_hat, y_hat>` w.r.t. every parameter, by backpropagation
/// through the decoder and encoder recursions.
pub fn model_backward<T: Real>(
    params: &ModelParams<T>,
    cache: &ModelCache<T>,
    d_y_hat: &Tensor<T>,
) -> Result<ModelParams<T>, ModelError> {
    let dims = &params.dims;
    if *dims != cache.dims || cache.encoder.is_empty() || cache.decoder.len() != cache.horizon() {
        return Err(ModelError::StaleCache);
    }
    let n = dims.n_distance_bins;
    let (l, f_steps, filters) = (cache.lookback(), cache.horizon(), dims.filters);
    if d_y_hat.shape() != [f_steps, n, N_DIRECTIONS, 1] {
        return Err(ModelError::Shape("d_y_hat must match the forward output"));
    }
    let g = &cache.geom;
    let mut grads = params.zeros_like();
    let hw = params.head.w.data();

    let mut dh_carry = vec![T::zero(); filters * n];
    let mut dc_carry = vec![T::zero(); filters * n];
    let mut dz_static = vec![T::zero(); 4 * filters * n];
    let dy = d_y_hat.data();
    for t in (0..f_steps).rev() {
        let dec = &cache.decoder[t];
        let pre = &cache.head_pre[t];
        let mut dpre = vec![T::zero(); N_DIRECTIONS * n];
        for k in 0..N_DIRECTIONS {
            for d in 0..n {
                if pre[k * n + d] > T::zero() {
                    dpre[k * n + d] = dy[(t * n + d) * N_DIRECTIONS + k];
                }
            }
        }
        let mut dh = dh_carry;
        {
            let gw = grads.head.w.data_mut();
            for k in 0..N_DIRECTIONS {
                let drow = &dpre[k * n..(k + 1) * n];
                for ch in 0..filters {
                    let hrow = &dec.h[ch * n..(ch + 1) * n];
                    let mut s = T::zero();
                    for (&a, &b) in drow.iter().zip(hrow) {
                        s = s + a * b;
                    }
                    gw[k * filters + ch] = gw[k * filters + ch] + s;
                    let w = hw[k * filters + ch];
                    for (o, &v) in dh[ch * n..(ch + 1) * n].iter_mut().zip(drow) {
                        *o = *o + w * v;
                    }
                }
            }
            let gb = grads.head.b.data_mut();
            for k in 0..N_DIRECTIONS {
                gb[k] = gb[k] + row_sum(&dpre[k * n..(k + 1) * n]);
            }
        }
        let sg = step_backward(
            &params.decoder,
            &mut grads.decoder,
            dec,
            InputSlice {
                data: &cache.terminal[t],
                c_lo: filters,
                c_count: N_DIRECTIONS,
            },
            &dh,
            &dc_carry,
            g,
        );
        for (a, &b) in dz_static.iter_mut().zip(&sg.dz) {
            *a = *a + b;
        }
        dh_carry = sg.dh_prev;
        dc_carry = sg.dc_prev;
    }

    // encoder output feeds the decoder both as initial state and as input
    let h_enc = &cache.encoder[l - 1].h;
    let dec_w = &params.decoder.w_x;
    let c_total = dec_w.shape()[1];
    conv_backward_weight(
        grads.decoder.w_x.data_mut(),
        4 * filters,
        c_total,
        0,
        h_enc,
        filters,
        &dz_static,
        g,
    );
    conv_backward_input(
        &mut dh_carry,
        WeightView {
            w: dec_w.data(),
            c_out: 4 * filters,
            c_total,
            c_lo: 0,
        },
        &dz_static,
        filters,
        g,
    );

    for t in (0..l).rev() {
        let sg = step_backward(
            &params.encoder,
            &mut grads.encoder,
            &cache.encoder[t],
            InputSlice {
                data: &cache.frames[t],
                c_lo: 0,
                c_count: N_DIRECTIONS,
            },
            &dh_carry,
            &dc_carry,
            g,
        );
        dh_carry = sg.dh_prev;
        dc_carry = sg.dc_prev;
    }
    Ok(grads)
}

/// Mean squared error over all elements and its gradient `2 (y_hat - y) / N`.
pub fn mse_loss<T: Real>(y: &Tensor<T>, y_hat: &Tensor<T>) -> Result<(f64, Tensor<T>), ModelError> {
    if y.shape() != y_hat.shape() {
        return Err(ModelError::Shape("y and y_hat must have the same shape"));
    }
    let count = y.len().max(1);
    let scale = T::from_f64_lossy(2.0 / count as f64);
    let mut sum = 0.0f64;
    let grad: Vec<T> = y
        .data()
        .iter()
        .zip(y_hat.data())
        .map(|(&a, &b)| {
            let d = b - a;
            sum += d.to_f64_lossy() * d.to_f64_lossy();
            scale * d
        })
        .collect();
    Ok((
        sum / count as f64,
        Tensor::from_vec(y.shape(), grad).expect("same shape"),
    ))
}
