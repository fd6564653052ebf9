//! Floating-point element abstraction.
//!
//! The network runs in `f32`; the gradient-check suites rebuild the same
//! graphs in `f64`, where central differences are trustworthy.

use core::fmt::{Debug, Display};
use core::iter::Sum;
use core::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;

/// Element type for tensors, parameters and gradients.
pub trait Scalar:
    Float
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// Dense row-major matrix multiply: `c = alpha * a * b + beta * c`
    /// with `a` of size `m x k`, `b` of size `k x n`, `c` of size `m x n`.
    ///
    /// `a` and `b` are given with explicit (row, column) strides so callers
    /// can pass transposed views without copying.
    #[allow(clippy::too_many_arguments)]
    fn gemm_strided(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
    );

    /// Row-major contiguous `c = alpha * a * b + beta * c`.
    fn gemm(m: usize, k: usize, n: usize, alpha: Self, a: &[Self], b: &[Self], beta: Self, c: &mut [Self]) {
        Self::gemm_strided(m, k, n, alpha, a, k as isize, 1, b, n as isize, 1, beta, c);
    }
}

/// `exp` routed through [`num_traits::Float`] so builds without `std` resolve it.
#[inline]
pub(crate) fn exp64(x: f64) -> f64 {
    Float::exp(x)
}

/// `sqrt` routed through [`num_traits::Float`] so builds without `std` resolve it.
#[inline]
pub(crate) fn sqrt64(x: f64) -> f64 {
    Float::sqrt(x)
}

/// `sin` routed through [`num_traits::Float`] so builds without `std` resolve it.
#[inline]
pub(crate) fn sin64(x: f64) -> f64 {
    Float::sin(x)
}

/// `cos` routed through [`num_traits::Float`] so builds without `std` resolve it.
#[inline]
pub(crate) fn cos64(x: f64) -> f64 {
    Float::cos(x)
}

/// `floor` routed through [`num_traits::Float`] so builds without `std` resolve it.
#[inline]
pub(crate) fn floor64(x: f64) -> f64 {
    Float::floor(x)
}

/// `ceil` routed through [`num_traits::Float`] so builds without `std` resolve it.
#[inline]
pub(crate) fn ceil64(x: f64) -> f64 {
    Float::ceil(x)
}

/// `powi` routed through [`num_traits::Float`] so builds without `std` resolve it.
#[inline]
pub(crate) fn powi64(x: f64, n: i32) -> f64 {
    Float::powi(x, n)
}

fn max_flat_index(rows: usize, cols: usize, rs: isize, cs: isize) -> usize {
    let r = (rows as isize - 1).max(0) * rs;
    let c = (cols as isize - 1).max(0) * cs;
    (r + c) as usize
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }

    fn gemm_strided(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
    ) {
        if m == 0 || n == 0 {
            return;
        }
        assert!(a.len() > max_flat_index(m, k, rsa, csa), "gemm: a too short");
        assert!(b.len() > max_flat_index(k, n, rsb, csb), "gemm: b too short");
        assert!(c.len() >= m * n, "gemm: c too short");
        unsafe {
            matrixmultiply::sgemm(
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
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }

    fn gemm_strided(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
    ) {
        if m == 0 || n == 0 {
            return;
        }
        assert!(a.len() > max_flat_index(m, k, rsa, csa), "gemm: a too short");
        assert!(b.len() > max_flat_index(k, n, rsb, csb), "gemm: b too short");
        assert!(c.len() >= m * n, "gemm: c too short");
        unsafe {
            matrixmultiply::dgemm(
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
}
