//! Planted instances, initialisations, client data and head diversity.

use serde::Serialize;

use crate::engine::ModelState;
use crate::error::{Error, Result};
use crate::linalg::{min_eig_psd, orthonormalize, spectral_norm, Matrix, Vector};
use crate::rng::Stream;

#[derive(Clone, Debug)]
pub struct GroundTruth {
    pub b_star: Matrix,
    pub heads: Vec<Vector>,
    pub noise_sigma: f64,
}

impl GroundTruth {
    pub fn d(&self) -> usize {
        self.b_star.rows()
    }

    pub fn k(&self) -> usize {
        self.b_star.cols()
    }

    pub fn num_clients(&self) -> usize {
        self.heads.len()
    }

    pub fn mean_head(&self) -> Vector {
        Vector::mean(&self.heads)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DiversityStats {
    pub mu: f64,
    pub l_max: f64,
    pub gamma: f64,
    pub h: f64,
    /// `f64::INFINITY` when `mu == 0`.
    pub kappa_max: f64,
    pub w_bar: Vector,
}

#[derive(Clone, Debug)]
pub struct Batch {
    pub x: Matrix,
    pub y: Vector,
}

pub fn gen_ground_truth(
    d: usize,
    k: usize,
    num_clients: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<GroundTruth> {
    if k == 0 || k >= d {
        return Err(Error::DimensionError(format!("need 1 <= k < d, got d={d}, k={k}")));
    }
    if num_clients == 0 {
        return Err(Error::DimensionError("need at least one client".into()));
    }
    let mut s = Stream::new(seed, "b_star", &[]);
    let g = Matrix::from_fn(d, k, |_, _| s.normal());
    let (b_star, _) = orthonormalize(&g)?;
    let heads = (0..num_clients)
        .map(|i| {
            let mut s = Stream::new(seed, "head", &[i as u64]);
            Vector::from_vec(s.normals(k))
        })
        .collect();
    Ok(GroundTruth {
        b_star,
        heads,
        noise_sigma,
    })
}

pub fn diversity_stats(heads: &[Vector]) -> DiversityStats {
    assert!(!heads.is_empty(), "diversity_stats needs at least one head");
    let k = heads[0].dim();
    let m = heads.len() as f64;
    let w_bar = Vector::mean(heads);

    let mut cov = Matrix::zeros(k, k);
    let mut second = Matrix::zeros(k, k);
    let mut gamma_sq = 0.0;
    let mut l_max = 0.0f64;
    for w in heads {
        let c = w.sub(&w_bar);
        gamma_sq += c.dot(&c);
        cov.rank1_update(1.0 / m, &c, &c);
        second.rank1_update(1.0 / m, w, w);
        l_max = l_max.max(w.norm());
    }
    gamma_sq /= m;
    cov.symmetrize();
    second.symmetrize();

    let mu_sq = min_eig_psd(&cov).expect("finite k×k covariance");
    let h4 = heads
        .iter()
        .map(|w| {
            let dev = Matrix::outer(w, w).sub(&second);
            spectral_norm(&dev).expect("finite k×k matrix").powi(2)
        })
        .sum::<f64>()
        / m;

    let mu = mu_sq.sqrt();
    let kappa_max = if mu > 0.0 { l_max / mu } else { f64::INFINITY };
    DiversityStats {
        mu,
        l_max,
        gamma: gamma_sq.sqrt(),
        h: h4.powf(0.25),
        kappa_max,
        w_bar,
    }
}

/// Initial model with w₀ = 0 and B₀ = Q/√α for an orthonormal Q.
///
/// Without a target, Q spans a uniformly random subspace. With a target δ,
/// one direction of col(B_*) is tilted by arcsin(δ) toward a random normal
/// direction and the basis is then mixed by a random k×k rotation.
pub fn gen_init(
    gt: &GroundTruth,
    alpha: f64,
    delta0_target: Option<f64>,
    seed: u64,
) -> Result<ModelState> {
    let (d, k) = gt.b_star.shape();
    if alpha <= 0.0 || !alpha.is_finite() {
        return Err(Error::DimensionError(format!("alpha must be positive, got {alpha}")));
    }
    let q = match delta0_target {
        None => {
            let mut s = Stream::new(seed, "init", &[]);
            let g = Matrix::from_fn(d, k, |_, _| s.normal());
            orthonormalize(&g)?.0
        }
        Some(delta) => {
            if !(delta > 0.0 && delta < 1.0) {
                return Err(Error::TargetInfeasible(delta));
            }
            planted_basis(&gt.b_star, delta, seed)?
        }
    };
    Ok(ModelState {
        b: q.scale(1.0 / alpha.sqrt()),
        w: Vector::zeros(k),
    })
}

fn planted_basis(b_star: &Matrix, delta: f64, seed: u64) -> Result<Matrix> {
    let (d, k) = b_star.shape();
    let mut s = Stream::new(seed, "init-planted", &[]);
    let normal = unit_normal_to(b_star, &mut s)?;
    let theta = delta.asin();
    let mut tilted = b_star.clone();
    let first = b_star.col(0).scale(theta.cos()).add(&normal.scale(theta.sin()));
    tilted.set_col(0, &first);
    let mut r = Stream::new(seed, "init-rotation", &[]);
    let (rot, _) = orthonormalize(&Matrix::from_fn(k, k, |_, _| r.normal()))?;
    let q = tilted.matmul(&rot);
    debug_assert_eq!(q.shape(), (d, k));
    Ok(q)
}

/// Random unit vector orthogonal to col(Q) for orthonormal Q.
pub(crate) fn unit_normal_to(q: &Matrix, s: &mut Stream) -> Result<Vector> {
    let d = q.rows();
    for _ in 0..16 {
        let mut v = Vector::from_vec(s.normals(d));
        // Two projection passes keep the result orthogonal to rounding level.
        for _ in 0..2 {
            let c = q.tmatvec(&v);
            v = v.sub(&q.matvec(&c));
        }
        let n = v.norm();
        if n > 1e-8 {
            return Ok(v.scale(1.0 / n));
        }
    }
    Err(Error::RankDeficient { column: 0, norm: 0.0 })
}

/// Fresh batch of `b` samples for client `client`: rows of X are N(0, I_d),
/// y = X B_* w_{*,i} + ζ with ζ ~ N(0, σ²).
pub fn sample_batch(gt: &GroundTruth, client: usize, b: usize, stream: &mut Stream) -> Batch {
    assert!(b >= 1, "batch size must be positive");
    assert!(client < gt.num_clients(), "client index out of range");
    let d = gt.d();
    let x = Matrix::from_vec(b, d, stream.normals(b * d));
    let target = gt.b_star.matvec(&gt.heads[client]);
    let mut y = x.matvec(&target);
    if gt.noise_sigma > 0.0 {
        for j in 0..b {
            y[j] += gt.noise_sigma * stream.normal();
        }
    }
    Batch { x, y }
}

#[cfg(test)]
#[path = "../tests/common/jacobi.rs"]
mod jacobi;
