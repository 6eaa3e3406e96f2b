//! Raw dense kernels shared by graph ops. Row-major throughout.

use crate::scalar::Scalar;

/// Problem size (m·k·n) from which the packed blocked kernel beats the plain loops.
const BLOCKED_MIN: usize = 4096;

/// `c[m×n] += a[m×k] · b[k×n]`
pub fn gemm_acc<S: Scalar>(a: &[S], b: &[S], c: &mut [S], m: usize, k: usize, n: usize) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m * k * n >= BLOCKED_MIN {
        let (k_, n_) = (k as isize, n as isize);
        // SAFETY: lengths are checked above against the row-major dimensions.
        unsafe { S::gemm_strided(m, k, n, a.as_ptr(), [k_, 1], b.as_ptr(), [n_, 1], c.as_mut_ptr(), [n_, 1]) };
        return;
    }
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &aik) in a_row.iter().enumerate() {
            if aik == S::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cj, &bj) in c_row.iter_mut().zip(b_row) {
                *cj += aik * bj;
            }
        }
    }
}

/// Dot product with eight independent partial sums so the loop vectorizes.
#[inline]
pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [S::zero(); 8];
    let (ac, bc) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ar, br) = (ac.remainder(), bc.remainder());
    for (x, y) in ac.zip(bc) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (&x, &y) in ar.iter().zip(br) {
        s += x * y;
    }
    s
}

/// `c[m×k] += g[m×n] · b[k×n]ᵀ`
pub fn gemm_nt_acc<S: Scalar>(g: &[S], b: &[S], c: &mut [S], m: usize, k: usize, n: usize) {
    assert_eq!(g.len(), m * n);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * k);
    if m * k * n >= BLOCKED_MIN {
        let (k_, n_) = (k as isize, n as isize);
        // SAFETY: bᵀ is read through swapped strides of the checked k×n buffer.
        unsafe { S::gemm_strided(m, n, k, g.as_ptr(), [n_, 1], b.as_ptr(), [1, n_], c.as_mut_ptr(), [k_, 1]) };
        return;
    }
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for p in 0..k {
            c[i * k + p] += dot(g_row, &b[p * n..(p + 1) * n]);
        }
    }
}

/// `c[k×n] += a[m×k]ᵀ · g[m×n]`
pub fn gemm_tn_acc<S: Scalar>(a: &[S], g: &[S], c: &mut [S], m: usize, k: usize, n: usize) {
    assert_eq!(a.len(), m * k);
    assert_eq!(g.len(), m * n);
    assert_eq!(c.len(), k * n);
    if m * k * n >= BLOCKED_MIN {
        let (k_, n_) = (k as isize, n as isize);
        // SAFETY: aᵀ is read through swapped strides of the checked m×k buffer.
        unsafe { S::gemm_strided(k, m, n, a.as_ptr(), [1, k_], g.as_ptr(), [n_, 1], c.as_mut_ptr(), [n_, 1]) };
        return;
    }
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == S::zero() {
                continue;
            }
            let c_row = &mut c[p * n..(p + 1) * n];
            for (cj, &gj) in c_row.iter_mut().zip(g_row) {
                *cj += aip * gj;
            }
        }
    }
}
