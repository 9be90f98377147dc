use super::{orthonormalize, spectral_norm, Matrix};
use crate::error::Result;

/// Sine of the largest principal angle between col(B1) and col(B2).
pub fn principal_angle_distance(b1: &Matrix, b2: &Matrix) -> Result<f64> {
    let (q1, _) = orthonormalize(b1)?;
    let (q2, _) = orthonormalize(b2)?;
    let residual = q2.sub(&q1.matmul(&q1.tmatmul(&q2)));
    Ok(spectral_norm(&residual)?.clamp(0.0, 1.0))
}

/// ‖(I − QQᵀ)B‖₂ for an orthonormal Q; the size of B outside col(Q).
pub fn perp_norm(q: &Matrix, b: &Matrix) -> Result<f64> {
    spectral_norm(&b.sub(&q.matmul(&q.tmatmul(b))))
}
