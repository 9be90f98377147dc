use super::Matrix;
use crate::error::{Error, Result};

const RANK_TOL: f64 = 1e-12;

/// Thin Householder QR of a d×k matrix with k ≤ d.
///
/// Returns (Q, R) with Q d×k orthonormal and R k×k upper triangular with a
/// nonnegative diagonal.
pub fn orthonormalize(a: &Matrix) -> Result<(Matrix, Matrix)> {
    let (d, k) = a.shape();
    if k == 0 || k > d {
        return Err(Error::DimensionError(format!(
            "orthonormalize needs 1 <= k <= d, got {d}x{k}"
        )));
    }
    let largest = (0..k)
        .map(|j| (0..d).map(|i| a[(i, j)] * a[(i, j)]).sum::<f64>().sqrt())
        .fold(0.0f64, f64::max);
    if largest == 0.0 || !largest.is_finite() {
        return Err(Error::RankDeficient {
            column: 0,
            norm: largest,
        });
    }

    let mut r = a.clone();
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(k);
    for j in 0..k {
        let x: Vec<f64> = (j..d).map(|i| r[(i, j)]).collect();
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < RANK_TOL * largest {
            return Err(Error::RankDeficient { column: j, norm });
        }
        let alpha = if x[0] >= 0.0 { -norm } else { norm };
        let mut v = x;
        v[0] -= alpha;
        let vnorm = v.iter().map(|t| t * t).sum::<f64>().sqrt();
        for t in v.iter_mut() {
            *t /= vnorm;
        }
        apply_reflector(&mut r, &v, j, j..k);
        reflectors.push(v);
    }

    let mut q = Matrix::zeros(d, k);
    for j in 0..k {
        q[(j, j)] = 1.0;
    }
    for (j, v) in reflectors.iter().enumerate().rev() {
        apply_reflector(&mut q, v, j, j..k);
    }

    let mut rk = Matrix::from_fn(k, k, |i, j| if i <= j { r[(i, j)] } else { 0.0 });
    for j in 0..k {
        if rk[(j, j)] < 0.0 {
            for c in 0..k {
                rk[(j, c)] = -rk[(j, c)];
            }
            for i in 0..d {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    Ok((q, rk))
}

/// Apply H = I − 2vvᵀ (acting on rows `offset..`) to the given columns.
fn apply_reflector(m: &mut Matrix, v: &[f64], offset: usize, cols: std::ops::Range<usize>) {
    for c in cols {
        let s: f64 = v
            .iter()
            .enumerate()
            .map(|(p, vp)| vp * m[(offset + p, c)])
            .sum();
        let s2 = 2.0 * s;
        for (p, vp) in v.iter().enumerate() {
            m[(offset + p, c)] -= s2 * vp;
        }
    }
}
