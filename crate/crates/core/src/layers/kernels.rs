//! Dense matrix kernels shared by convolution and dense layers.
//!
//! All matrices are row-major slices. Inner loops run over contiguous memory
//! so they vectorize; accumulation order is fixed, making results
//! bitwise-reproducible.

use crate::tensor::Real;

/// Column panel width; a panel of `c` and `b` stays cache-resident while the
/// shared dimension is swept. Each output still accumulates over `k` in order.
const PANEL: usize = 256;

/// `c[m×n] += a[m×k] · b[k×n]`
pub(crate) fn gemm_nn<T: Real>(m: usize, n: usize, k: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    for j0 in (0..n).step_by(PANEL) {
        let j1 = (j0 + PANEL).min(n);
        for i in 0..m {
            let crow = &mut c[i * n + j0..i * n + j1];
            let arow = &a[i * k..(i + 1) * k];
            for (kk, &aik) in arow.iter().enumerate() {
                let brow = &b[kk * n + j0..kk * n + j1];
                for (cv, &bv) in crow.iter_mut().zip(brow) {
                    *cv += aik * bv;
                }
            }
        }
    }
}

/// `c[m×n] += a[m×k] · b[n×k]ᵀ`, summing panel-wise partial dot products
/// over the shared dimension.
pub(crate) fn gemm_nt<T: Real>(m: usize, n: usize, k: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert!(a.len() >= m * k && b.len() >= n * k && c.len() >= m * n);
    for k0 in (0..k).step_by(PANEL) {
        let k1 = (k0 + PANEL).min(k);
        for i in 0..m {
            let arow = &a[i * k + k0..i * k + k1];
            for j in 0..n {
                c[i * n + j] += dot(arow, &b[j * k + k0..j * k + k1]);
            }
        }
    }
}

/// `c[m×n] += a[k×m]ᵀ · b[k×n]`
pub(crate) fn gemm_tn<T: Real>(m: usize, n: usize, k: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert!(a.len() >= k * m && b.len() >= k * n && c.len() >= m * n);
    for j0 in (0..n).step_by(PANEL) {
        let j1 = (j0 + PANEL).min(n);
        for kk in 0..k {
            let brow = &b[kk * n + j0..kk * n + j1];
            let acol = &a[kk * m..(kk + 1) * m];
            for (i, &aki) in acol.iter().enumerate() {
                let crow = &mut c[i * n + j0..i * n + j1];
                for (cv, &bv) in crow.iter_mut().zip(brow) {
                    *cv += aki * bv;
                }
            }
        }
    }
}

/// Dot product with eight independent accumulators.
#[inline]
pub(crate) fn dot<T: Real>(x: &[T], y: &[T]) -> T {
    debug_assert_eq!(x.len(), y.len());
    let mut acc = [T::zero(); 8];
    let cx = x.chunks_exact(8);
    let cy = y.chunks_exact(8);
    let (rx, ry) = (cx.remainder(), cy.remainder());
    for (a, b) in cx.zip(cy) {
        for l in 0..8 {
            acc[l] += a[l] * b[l];
        }
    }
    let mut s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for (&a, &b) in rx.iter().zip(ry) {
        s += a * b;
    }
    s
}
