//! Minimal dense linear algebra on flat `f64` slices for the decoder hot
//! paths, where per-call allocation and generic matrix types would dominate.

use crate::{Error, Result};

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// In-place lower Cholesky factor of a symmetric positive-definite matrix
/// stored row-major in `a` (`dim x dim`). Fails on non-positive pivots.
pub(crate) fn cholesky(a: &mut [f64], dim: usize) -> Result<()> {
    for j in 0..dim {
        for k in 0..j {
            let ljk = a[j * dim + k];
            for i in j..dim {
                a[i * dim + j] -= a[i * dim + k] * ljk;
            }
        }
        let pivot = a[j * dim + j];
        if pivot <= 0.0 || !pivot.is_finite() {
            return Err(Error::Numeric(format!(
                "Cholesky pivot {pivot:e} at column {j}: matrix not positive definite"
            )));
        }
        let root = pivot.sqrt();
        for i in j..dim {
            a[i * dim + j] /= root;
        }
        for i in 0..j {
            a[i * dim + j] = 0.0;
        }
    }
    Ok(())
}

/// Solve `L L^T x = b` given the lower factor from [`cholesky`].
pub(crate) fn cholesky_solve(l: &[f64], dim: usize, b: &[f64]) -> Vec<f64> {
    let mut x = b.to_vec();
    for i in 0..dim {
        for k in 0..i {
            x[i] -= l[i * dim + k] * x[k];
        }
        x[i] /= l[i * dim + i];
    }
    for i in (0..dim).rev() {
        for k in (i + 1)..dim {
            x[i] -= l[k * dim + i] * x[k];
        }
        x[i] /= l[i * dim + i];
    }
    x
}
