use num_traits::{Float, FromPrimitive};

/// Floating point element type used by the model.
///
/// Training and inference run in `f32`; gradient verification uses `f64`.
pub trait Real:
    Float + FromPrimitive + Default + Copy + Send + Sync + core::fmt::Debug + core::iter::Sum + 'static
{
    fn from_f64_lossy(v: f64) -> Self;
    fn to_f64_lossy(self) -> f64;

    /// `C <- alpha * A B + beta * C` on strided row/column layouts.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        beta: Self,
        c: &mut [Self],
        c_strides: (isize, isize),
    );
}

macro_rules! strided_bounds {
    ($rows:expr, $cols:expr, $s:expr, $len:expr) => {
        if $rows > 0 && $cols > 0 {
            let last = ($rows as isize - 1) * $s.0 + ($cols as isize - 1) * $s.1;
            assert!(
                $s.0 >= 0 && $s.1 >= 0 && (last as usize) < $len,
                "gemm operand out of bounds"
            );
        }
    };
}

impl Real for f32 {
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        sa: (isize, isize),
        b: &[Self],
        sb: (isize, isize),
        beta: Self,
        c: &mut [Self],
        sc: (isize, isize),
    ) {
        strided_bounds!(m, k, sa, a.len());
        strided_bounds!(k, n, sb, b.len());
        strided_bounds!(m, n, sc, c.len());
        // SAFETY: every operand was bounds-checked against its stride layout above.
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                sa.0,
                sa.1,
                b.as_ptr(),
                sb.0,
                sb.1,
                beta,
                c.as_mut_ptr(),
                sc.0,
                sc.1,
            );
        }
    }
    fn from_f64_lossy(v: f64) -> Self {
        v as f32
    }
    fn to_f64_lossy(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        sa: (isize, isize),
        b: &[Self],
        sb: (isize, isize),
        beta: Self,
        c: &mut [Self],
        sc: (isize, isize),
    ) {
        strided_bounds!(m, k, sa, a.len());
        strided_bounds!(k, n, sb, b.len());
        strided_bounds!(m, n, sc, c.len());
        // SAFETY: every operand was bounds-checked against its stride layout above.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                sa.0,
                sa.1,
                b.as_ptr(),
                sb.0,
                sb.1,
                beta,
                c.as_mut_ptr(),
                sc.0,
                sc.1,
            );
        }
    }
    fn from_f64_lossy(v: f64) -> Self {
        v
    }
    fn to_f64_lossy(self) -> f64 {
        self
    }
}

#[inline]
pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}
