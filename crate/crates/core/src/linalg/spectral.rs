//! Extreme singular values through the Gram matrix of the smaller side.
//!
//! The largest eigenvalue of a PSD Gram G is found by repeatedly squaring the
//! trace-normalised matrix, which is the power method run on all basis vectors
//! at once with 2^n effective iterations after n squarings. It converges to the
//! projector onto the top eigenspace, so exactly degenerate spectra (as in a
//! scaled orthonormal basis) are handled without special casing.

use super::Matrix;
use crate::error::{Error, Result};

const MAX_SQUARINGS: usize = 100;
const SQUARING_TOL: f64 = 1e-14;
const SINGULAR_PIVOT: f64 = 1e-14;

/// σ_max(A).
pub fn spectral_norm(a: &Matrix) -> Result<f64> {
    check_nonempty(a)?;
    let g = smaller_gram(a);
    Ok(max_eig_psd(&g)?.sqrt())
}

/// Smallest of the min(rows, cols) singular values of A.
pub fn min_singular_value(a: &Matrix) -> Result<f64> {
    check_nonempty(a)?;
    let g = smaller_gram(a);
    Ok(min_eig_psd(&g)?.sqrt())
}

fn check_nonempty(a: &Matrix) -> Result<()> {
    if a.rows() == 0 || a.cols() == 0 {
        return Err(Error::DimensionError("empty matrix".into()));
    }
    if !a.is_finite() {
        return Err(Error::DimensionError("non-finite entries".into()));
    }
    Ok(())
}

fn smaller_gram(a: &Matrix) -> Matrix {
    if a.rows() >= a.cols() {
        a.gram()
    } else {
        a.transpose().gram()
    }
}

/// Largest eigenvalue of a symmetric positive semidefinite matrix.
pub(crate) fn max_eig_psd(g: &Matrix) -> Result<f64> {
    let v = top_eigvec(g)?;
    match v {
        None => Ok(0.0),
        Some(v) => Ok(rayleigh(g, &v).max(0.0)),
    }
}

/// Smallest eigenvalue of a symmetric positive semidefinite matrix; 0 when
/// the matrix is singular to working precision.
pub(crate) fn min_eig_psd(g: &Matrix) -> Result<f64> {
    let n = g.rows();
    let scale = (0..n).fold(0.0f64, |m, i| m.max(g[(i, i)]));
    if scale == 0.0 {
        return Ok(0.0);
    }
    let l = match cholesky(g, SINGULAR_PIVOT * scale) {
        Some(l) => l,
        None => return Ok(0.0),
    };
    let inv = cholesky_inverse(&l);
    match top_eigvec(&inv)? {
        None => Ok(0.0),
        Some(v) => Ok(rayleigh(g, &v).max(0.0)),
    }
}

fn rayleigh(g: &Matrix, v: &[f64]) -> f64 {
    let n = g.rows();
    let mut num = 0.0;
    for i in 0..n {
        let gi: f64 = (0..n).map(|j| g[(i, j)] * v[j]).sum();
        num += v[i] * gi;
    }
    let den: f64 = v.iter().map(|x| x * x).sum();
    num / den
}

/// A unit-scale vector in the top eigenspace, or None for the zero matrix.
fn top_eigvec(g: &Matrix) -> Result<Option<Vec<f64>>> {
    let n = g.rows();
    let tr = g.trace();
    if tr <= 0.0 || !tr.is_finite() {
        return Ok(None);
    }
    let mut p = g.scale(1.0 / tr);
    let mut converged = false;
    for _ in 0..MAX_SQUARINGS {
        let mut next = p.matmul(&p);
        next.symmetrize();
        let t = next.trace();
        if t <= 0.0 {
            // Underflow can only happen once p is numerically a projector.
            converged = true;
            break;
        }
        next = next.scale(1.0 / t);
        let change = next.sub(&p).max_abs();
        p = next;
        if change <= SQUARING_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            iterations: MAX_SQUARINGS,
        });
    }
    let best = (0..n)
        .max_by(|&a, &b| p[(a, a)].total_cmp(&p[(b, b)]))
        .expect("nonempty");
    let v: Vec<f64> = (0..n).map(|i| p[(i, best)]).collect();
    Ok(Some(v))
}

/// Lower-triangular L with G = L Lᵀ, or None if a pivot falls below `floor`.
fn cholesky(g: &Matrix, floor: f64) -> Option<Matrix> {
    let n = g.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = g[(j, j)];
        for p in 0..j {
            d -= l[(j, p)] * l[(j, p)];
        }
        if d <= floor {
            return None;
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = g[(i, j)];
            for p in 0..j {
                s -= l[(i, p)] * l[(j, p)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Some(l)
}

fn cholesky_inverse(l: &Matrix) -> Matrix {
    let n = l.rows();
    // L⁻¹ by forward substitution, then G⁻¹ = L⁻ᵀ L⁻¹.
    let mut linv = Matrix::zeros(n, n);
    for c in 0..n {
        for i in c..n {
            let mut s = if i == c { 1.0 } else { 0.0 };
            for p in c..i {
                s -= l[(i, p)] * linv[(p, c)];
            }
            linv[(i, c)] = s / l[(i, i)];
        }
    }
    let mut inv = linv.tmatmul(&linv);
    inv.symmetrize();
    inv
}

#[cfg(test)]
#[path = "../../tests/common/jacobi.rs"]
mod jacobi;
