use alloc::vec;
use alloc::vec::Vec;

use super::conv::{
    conv_accumulate, conv_backward_input, conv_backward_weight, row_sum, Geom, WeightView,
};
use super::params::{ConvLstmLayerParams, GATE_CANDIDATE, GATE_FORGET, GATE_INPUT, GATE_OUTPUT};
use super::ModelError;
use crate::real::sigmoid;
use crate::{Real, Tensor};

/// Everything one cell step needs for its backward pass.
#[derive(Debug, Clone)]
pub struct CellCache<T> {
    pub h_prev: Vec<T>,
    pub c_prev: Vec<T>,
    /// Activated gates `[4 filters x N]`.
    pub gates: Vec<T>,
    pub c: Vec<T>,
    pub tanh_c: Vec<T>,
    pub h: Vec<T>,
}

/// The part of a cell's input fed through `w_x`: channels
/// `c_lo .. c_lo + data.len() / N` of the layer's input.
#[derive(Debug, Clone, Copy)]
pub(crate) struct InputSlice<'a, T> {
    pub data: &'a [T],
    pub c_lo: usize,
    pub c_count: usize,
}

fn weight_view<'a, T>(w: &'a Tensor<T>, c_lo: usize) -> WeightView<'a, T>
where
    T: Copy + Default,
{
    WeightView {
        w: w.data(),
        c_out: w.shape()[0],
        c_total: w.shape()[1],
        c_lo,
    }
}

/// One ConvLSTM step. `static_z` is an optional precomputed contribution to
/// the gate pre-activations from input channels that stay fixed over time.
pub(crate) fn step<T: Real>(
    p: &ConvLstmLayerParams<T>,
    x: InputSlice<'_, T>,
    static_z: Option<&[T]>,
    h_prev: &[T],
    c_prev: &[T],
    g: &Geom,
) -> CellCache<T> {
    let f = p.filters();
    let n = g.positions;
    let mut z = vec![T::zero(); 4 * f * n];
    for (row, &b) in z.chunks_exact_mut(n).zip(p.b.data()) {
        row.fill(b);
    }
    if let Some(s) = static_z {
        for (a, &b) in z.iter_mut().zip(s) {
            *a = *a + b;
        }
    }
    conv_accumulate(&mut z, weight_view(&p.w_x, x.c_lo), x.data, x.c_count, g);
    conv_accumulate(&mut z, weight_view(&p.w_h, 0), h_prev, f, g);

    let (sig_a, rest) = z.split_at_mut(GATE_CANDIDATE * f * n);
    let (cand, out_gate) = rest.split_at_mut(f * n);
    debug_assert_eq!(GATE_OUTPUT, 3);
    for v in sig_a.iter_mut().chain(out_gate.iter_mut()) {
        *v = sigmoid(*v);
    }
    for v in cand.iter_mut() {
        *v = v.tanh();
    }
    let gates = z;
    let gate = |k: usize| &gates[k * f * n..(k + 1) * f * n];
    let (gi, gf, gg, go) = (
        gate(GATE_INPUT),
        gate(GATE_FORGET),
        gate(GATE_CANDIDATE),
        gate(GATE_OUTPUT),
    );
    let mut c = vec![T::zero(); f * n];
    let mut tanh_c = vec![T::zero(); f * n];
    let mut h = vec![T::zero(); f * n];
    for idx in 0..f * n {
        c[idx] = gf[idx] * c_prev[idx] + gi[idx] * gg[idx];
        tanh_c[idx] = c[idx].tanh();
        h[idx] = go[idx] * tanh_c[idx];
    }
    CellCache {
        h_prev: h_prev.to_vec(),
        c_prev: c_prev.to_vec(),
        gates,
        c,
        tanh_c,
        h,
    }
}

pub(crate) struct StepGrads<T> {
    /// Gradient w.r.t. the gate pre-activations `[4 filters x N]`.
    pub dz: Vec<T>,
    pub dh_prev: Vec<T>,
    pub dc_prev: Vec<T>,
}

/// Backward of [`step`]. Accumulates into `grads` for `b`, `w_h` and the
/// `w_x` channels covered by `x`; the caller owns the `static_z` path.
pub(crate) fn step_backward<T: Real>(
    p: &ConvLstmLayerParams<T>,
    grads: &mut ConvLstmLayerParams<T>,
    cache: &CellCache<T>,
    x: InputSlice<'_, T>,
    dh: &[T],
    dc: &[T],
    g: &Geom,
) -> StepGrads<T> {
    let f = p.filters();
    let n = g.positions;
    let fn_ = f * n;
    let gates = &cache.gates;
    let one = T::one();
    let mut dz = vec![T::zero(); 4 * fn_];
    let mut dc_prev = vec![T::zero(); fn_];
    for idx in 0..fn_ {
        let i = gates[GATE_INPUT * fn_ + idx];
        let fg = gates[GATE_FORGET * fn_ + idx];
        let gc = gates[GATE_CANDIDATE * fn_ + idx];
        let o = gates[GATE_OUTPUT * fn_ + idx];
        let tc = cache.tanh_c[idx];
        let d_o = dh[idx] * tc;
        let dct = dc[idx] + dh[idx] * o * (one - tc * tc);
        let d_i = dct * gc;
        let d_g = dct * i;
        let d_f = dct * cache.c_prev[idx];
        dc_prev[idx] = dct * fg;
        dz[GATE_INPUT * fn_ + idx] = d_i * i * (one - i);
        dz[GATE_FORGET * fn_ + idx] = d_f * fg * (one - fg);
        dz[GATE_CANDIDATE * fn_ + idx] = d_g * (one - gc * gc);
        dz[GATE_OUTPUT * fn_ + idx] = d_o * o * (one - o);
    }
    for (db, row) in grads.b.data_mut().iter_mut().zip(dz.chunks_exact(n)) {
        *db = *db + row_sum(row);
    }
    let (c_out, cx_total) = (4 * f, p.in_channels());
    conv_backward_weight(
        grads.w_x.data_mut(),
        c_out,
        cx_total,
        x.c_lo,
        x.data,
        x.c_count,
        &dz,
        g,
    );
    conv_backward_weight(grads.w_h.data_mut(), c_out, f, 0, &cache.h_prev, f, &dz, g);
    let mut dh_prev = vec![T::zero(); fn_];
    conv_backward_input(&mut dh_prev, weight_view(&p.w_h, 0), &dz, f, g);
    StepGrads {
        dz,
        dh_prev,
        dc_prev,
    }
}

/// Public single-step ConvLSTM cell.
///
/// `x_t` is `[C_in x N_d x W]`, the states `[filters x N_d x W]`; the kernel
/// slides along `N_d` with zero padding and has extent 1 along `W`.
pub fn cell_forward<T: Real>(
    x_t: &Tensor<T>,
    h_prev: &Tensor<T>,
    c_prev: &Tensor<T>,
    params: &ConvLstmLayerParams<T>,
) -> Result<(Tensor<T>, Tensor<T>), ModelError> {
    let xs = x_t.shape();
    if xs.len() != 3 || xs[0] != params.in_channels() {
        return Err(ModelError::Shape("x_t must be [in_channels x N_d x W]"));
    }
    let state_shape = [params.filters(), xs[1], xs[2]];
    if h_prev.shape() != state_shape || c_prev.shape() != state_shape {
        return Err(ModelError::Shape(
            "states must be [filters x N_d x W] matching x_t",
        ));
    }
    let g = Geom {
        positions: xs[1] * xs[2],
        width: xs[2],
        kernel: params.kernel(),
    };
    let cache = step(
        params,
        InputSlice {
            data: x_t.data(),
            c_lo: 0,
            c_count: xs[0],
        },
        None,
        h_prev.data(),
        c_prev.data(),
        &g,
    );
    Ok((
        Tensor::from_vec(&state_shape, cache.h).expect("state shape"),
        Tensor::from_vec(&state_shape, cache.c).expect("state shape"),
    ))
}
