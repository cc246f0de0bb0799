//! Small dense kernels for symmetric positive-definite systems.
//!
//! Matrices are square, row-major `Vec<f64>` of side `n`. Only what the
//! Gaussian process needs: Cholesky, triangular solves and the inverse built
//! from the factor.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..n {
        s += a[i] * b[i];
    }
    s
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Lower Cholesky factor of `a`, in place. Returns `false` when `a` is not
/// numerically positive definite. The strict upper triangle is zeroed.
pub fn cholesky_in_place(a: &mut [f64], n: usize) -> bool {
    debug_assert_eq!(a.len(), n * n);
    for i in 0..n {
        let (done, rest) = a.split_at_mut(i * n);
        let row_i = &mut rest[..n];
        for j in 0..i {
            let row_j = &done[j * n..j * n + n];
            let s = row_i[j] - dot(&row_i[..j], &row_j[..j]);
            row_i[j] = s / row_j[j];
        }
        let d = row_i[i] - dot(&row_i[..i], &row_i[..i]);
        if !(d > 0.0) || !d.is_finite() {
            return false;
        }
        row_i[i] = math::sqrt(d);
        for v in &mut row_i[i + 1..] {
            *v = 0.0;
        }
    }
    true
}

/// Solves `L x = b` in place.
pub fn solve_lower(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let row = &l[i * n..i * n + i];
        b[i] = (b[i] - dot(row, &b[..i])) / l[i * n + i];
    }
}

/// Solves `L^T x = b` in place.
pub fn solve_lower_transpose(l: &[f64], n: usize, b: &mut [f64]) {
    for i in (0..n).rev() {
        let xi = b[i] / l[i * n + i];
        b[i] = xi;
        let row = &l[i * n..i * n + i];
        axpy(-xi, row, &mut b[..i]);
    }
}

/// `A^{-1} b` given the Cholesky factor of `A`.
pub fn cholesky_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut x = b.to_vec();
    solve_lower(l, n, &mut x);
    solve_lower_transpose(l, n, &mut x);
    x
}

/// Full symmetric `A^{-1}` from the Cholesky factor of `A`.
pub fn inverse_from_cholesky(l: &[f64], n: usize) -> Vec<f64> {
    // Rows of X = L^{-1}; row k is nonzero on columns 0..=k.
    let mut x = vec![0.0; n * n];
    for i in 0..n {
        let (done, rest) = x.split_at_mut(i * n);
        let row_i = &mut rest[..n];
        row_i[i] = 1.0;
        for k in 0..i {
            let lik = l[i * n + k];
            if lik != 0.0 {
                axpy(-lik, &done[k * n..k * n + k + 1], &mut row_i[..k + 1]);
            }
        }
        let inv = 1.0 / l[i * n + i];
        for v in &mut row_i[..=i] {
            *v *= inv;
        }
    }
    // A^{-1} = X^T X, accumulated over the lower triangle then mirrored.
    let mut inv = vec![0.0; n * n];
    for k in 0..n {
        let xk = &x[k * n..k * n + k + 1];
        for a in 0..=k {
            let xka = xk[a];
            if xka != 0.0 {
                axpy(xka, &xk[..=a], &mut inv[a * n..a * n + a + 1]);
            }
        }
    }
    for a in 0..n {
        for b in 0..a {
            inv[b * n + a] = inv[a * n + b];
        }
    }
    inv
}
