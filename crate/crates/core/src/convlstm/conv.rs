//! Same-size 1-D convolution along the distance axis.
//!
//! Feature maps are channel-major `[C x N]` with `N = n_distance_bins * width`
//! positions laid out row-major over `[n_distance_bins x width]`. A kernel tap
//! at offset `k - pad` reads position `n + (k - pad) * width`, i.e. it moves
//! along distance only and never across the width axis. Taps that fall off the
//! grid read zero padding.
//!
//! Weights are `[C_out x C_total x K]`; a call may touch only the channel
//! slice `c_lo .. c_lo + c_count` of the weight tensor.

use alloc::vec;
use alloc::vec::Vec;

use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geom {
    pub positions: usize,
    pub width: usize,
    pub kernel: usize,
}

impl Geom {
    #[inline]
    fn valid(&self, k: usize) -> (usize, usize, isize) {
        let shift = (k as isize - (self.kernel / 2) as isize) * self.width as isize;
        let lo = (-shift).max(0) as usize;
        let hi = (self.positions as isize - shift.max(0)).max(lo as isize) as usize;
        (lo, hi, shift)
    }
}

/// Which slice of a weight tensor a convolution uses.
#[derive(Debug, Clone, Copy)]
pub struct WeightView<'a, T> {
    pub w: &'a [T],
    pub c_out: usize,
    pub c_total: usize,
    pub c_lo: usize,
}

/// Unrolls `inp` (channels `0..c_count`) into `[c_count * K x N]` rows of
/// shifted copies, zero where a tap falls off the grid.
fn im2col<T: Real>(inp: &[T], c_count: usize, g: &Geom) -> Vec<T> {
    let n = g.positions;
    let mut cols = vec![T::zero(); c_count * g.kernel * n];
    for c in 0..c_count {
        let in_row = &inp[c * n..(c + 1) * n];
        for k in 0..g.kernel {
            let (lo, hi, shift) = g.valid(k);
            let dst = &mut cols[(c * g.kernel + k) * n..(c * g.kernel + k + 1) * n];
            dst[lo..hi].copy_from_slice(
                &in_row[(lo as isize + shift) as usize..(hi as isize + shift) as usize],
            );
        }
    }
    cols
}

/// `out[o] += sum_c sum_k w[o][c_lo + c][k] * shift_k(inp[c])`.
pub fn conv_accumulate<T: Real>(
    out: &mut [T],
    view: WeightView<'_, T>,
    inp: &[T],
    c_count: usize,
    g: &Geom,
) {
    let n = g.positions;
    debug_assert_eq!(out.len(), view.c_out * n);
    let cols = im2col(inp, c_count, g);
    let row = (view.c_total * g.kernel) as isize;
    let a = &view.w[view.c_lo * g.kernel..];
    T::gemm(
        view.c_out,
        c_count * g.kernel,
        n,
        a,
        (row, 1),
        &cols,
        (n as isize, 1),
        T::one(),
        out,
        (n as isize, 1),
    );
}

/// Gradient w.r.t. the input: `d_in[c] += sum_o sum_k w[o][c_lo + c][k] * unshift_k(d_out[o])`.
pub fn conv_backward_input<T: Real>(
    d_in: &mut [T],
    view: WeightView<'_, T>,
    d_out: &[T],
    c_count: usize,
    g: &Geom,
) {
    let n = g.positions;
    let ck = c_count * g.kernel;
    let mut d_cols = vec![T::zero(); ck * n];
    let row = (view.c_total * g.kernel) as isize;
    let a = &view.w[view.c_lo * g.kernel..];
    T::gemm(
        ck,
        view.c_out,
        n,
        a,
        (1, row),
        d_out,
        (n as isize, 1),
        T::zero(),
        &mut d_cols,
        (n as isize, 1),
    );
    for c in 0..c_count {
        let din_row = &mut d_in[c * n..(c + 1) * n];
        for k in 0..g.kernel {
            let (lo, hi, shift) = g.valid(k);
            let src = &d_cols[(c * g.kernel + k) * n..(c * g.kernel + k + 1) * n];
            let dst = &mut din_row[(lo as isize + shift) as usize..(hi as isize + shift) as usize];
            for (d, &v) in dst.iter_mut().zip(&src[lo..hi]) {
                *d = *d + v;
            }
        }
    }
}

/// Gradient w.r.t. the weights: `d_w[o][c_lo + c][k] += <d_out[o], shift_k(inp[c])>`.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward_weight<T: Real>(
    d_w: &mut [T],
    c_out: usize,
    c_total: usize,
    c_lo: usize,
    inp: &[T],
    c_count: usize,
    d_out: &[T],
    g: &Geom,
) {
    let n = g.positions;
    let cols = im2col(inp, c_count, g);
    let row = (c_total * g.kernel) as isize;
    let c = &mut d_w[c_lo * g.kernel..];
    T::gemm(
        c_out,
        n,
        c_count * g.kernel,
        d_out,
        (n as isize, 1),
        &cols,
        (1, n as isize),
        T::one(),
        c,
        (row, 1),
    );
}

pub(crate) fn row_sum<T: Real>(row: &[T]) -> T {
    row.iter().fold(T::zero(), |a, &b| a + b)
}
