use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point element type accepted by every numeric kernel in the crate.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn from_usize_lossy(v: usize) -> Self {
        Self::from_usize(v).expect("usize representable")
    }

    /// Strided `c += a · b` with `a: m×k`, `b: k×n`, `c: m×n`.
    ///
    /// # Safety
    /// Every index reachable through the given dimensions and strides must lie inside
    /// the corresponding slice.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_strided(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        a_s: [isize; 2],
        b: *const Self,
        b_s: [isize; 2],
        c: *mut Self,
        c_s: [isize; 2],
    );
}

impl Scalar for f32 {
    unsafe fn gemm_strided(
        m: usize,
        k: usize,
        n: usize,
        a: *const f32,
        a_s: [isize; 2],
        b: *const f32,
        b_s: [isize; 2],
        c: *mut f32,
        c_s: [isize; 2],
    ) {
        matrixmultiply::sgemm(m, k, n, 1.0, a, a_s[0], a_s[1], b, b_s[0], b_s[1], 1.0, c, c_s[0], c_s[1]);
    }
}

impl Scalar for f64 {
    unsafe fn gemm_strided(
        m: usize,
        k: usize,
        n: usize,
        a: *const f64,
        a_s: [isize; 2],
        b: *const f64,
        b_s: [isize; 2],
        c: *mut f64,
        c_s: [isize; 2],
    ) {
        matrixmultiply::dgemm(m, k, n, 1.0, a, a_s[0], a_s[1], b, b_s[0], b_s[1], 1.0, c, c_s[0], c_s[1]);
    }
}

/// `log(exp(a) + exp(b))` without overflow; `-inf` is the additive identity.
#[inline]
pub fn log_add<S: Scalar>(a: S, b: S) -> S {
    if a == S::neg_infinity() {
        return b;
    }
    if b == S::neg_infinity() {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Log-sum-exp over a slice, `-inf` for an empty or all `-inf` slice.
pub fn log_sum_exp<S: Scalar>(xs: &[S]) -> S {
    let max = xs.iter().copied().fold(S::neg_infinity(), S::max);
    if max == S::neg_infinity() {
        return max;
    }
    let sum: S = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}
