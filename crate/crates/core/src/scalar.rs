//! Scalar abstraction shared by every numeric module.
//!
//! All math in this crate is written against [`Real`], which is implemented
//! for `f32` and `f64`. Dense matrix products dispatch to the matching
//! `matrixmultiply` kernel.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Short type tag stored in serialized artifacts.
    const NAME: &'static str;

    /// `c <- alpha * a * b + beta * c` on strided row/column layouts.
    ///
    /// # Safety
    /// The strides and dimensions must describe valid regions of the given
    /// slices (same contract as `matrixmultiply::dgemm`).
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable in scalar type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {
    const NAME: &'static str = "f32";

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Real for f64 {
    const NAME: &'static str = "f64";

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// Row-major `c = alpha * op(a) * op(b) + beta * c`, where `op` optionally
/// transposes. `a` is stored as `[rows_a, cols_a]`, `b` as `[rows_b, cols_b]`.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Real>(
    trans_a: bool,
    trans_b: bool,
    a: &[T],
    rows_a: usize,
    cols_a: usize,
    b: &[T],
    rows_b: usize,
    cols_b: usize,
    alpha: T,
    beta: T,
    c: &mut [T],
) {
    let (m, k, rsa, csa) = if trans_a {
        (cols_a, rows_a, 1isize, cols_a as isize)
    } else {
        (rows_a, cols_a, cols_a as isize, 1isize)
    };
    let (kb, n, rsb, csb) = if trans_b {
        (cols_b, rows_b, 1isize, cols_b as isize)
    } else {
        (rows_b, cols_b, cols_b as isize, 1isize)
    };
    assert_eq!(k, kb, "gemm inner dimension mismatch");
    assert_eq!(a.len(), rows_a * cols_a);
    assert_eq!(b.len(), rows_b * cols_b);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: lengths checked above, strides describe dense row-major blocks.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
