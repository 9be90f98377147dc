//! The adversarial pair of ground truths that distributed GD cannot tell apart.
//!
//! Given B₀ whose column space contains u = B_* w̄/‖w̄‖, split both B₀ and B_*
//! into the u direction and an orthonormal complement (B̃₀, B̃_*). Reflecting
//! B̃_* through col(B̃₀) gives a second truth B_*′ with the same product
//! B_*′w̄ = B_*w̄, the same distance to B₀, and twice the principal angle to B_*.

use serde::Serialize;

use crate::engine::{global_round, local_step_toward, ModelState, SimConfig};
use crate::error::{Error, Result};
use crate::linalg::{orthonormalize, principal_angle_distance, Matrix, Vector};
use crate::problem::{unit_normal_to, GroundTruth};
use crate::rng::Stream;

const CONTAINMENT_TOL: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct AdversarialPair {
    pub b_star: Matrix,
    pub b_star_prime: Matrix,
    pub b0: Matrix,
    pub delta0: f64,
    pub w_bar: Vector,
}

/// Deviations from the four pair invariants, plus both forms of the separation
/// bound.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct InvariantResiduals {
    pub orthonormality_b_star: f64,
    pub orthonormality_b_star_prime: f64,
    pub product_gap: f64,
    pub dist_b0_b_star: f64,
    pub dist_b0_b_star_prime: f64,
    pub separation: f64,
    /// 2δ₀√(1−δ₀²)
    pub separation_bound: f64,
    /// 2δ₀√(1−δ₀), the other form that appears in the argument.
    pub separation_bound_alt: f64,
}

impl InvariantResiduals {
    pub fn holds(&self, delta0: f64) -> bool {
        self.orthonormality_b_star <= 1e-10
            && self.orthonormality_b_star_prime <= 1e-10
            && self.product_gap <= 1e-10
            && (self.dist_b0_b_star - delta0).abs() <= 1e-8
            && (self.dist_b0_b_star_prime - delta0).abs() <= 1e-8
            && self.separation >= self.separation_bound - 1e-8
    }
}

impl AdversarialPair {
    pub fn residuals(&self) -> Result<InvariantResiduals> {
        let k = self.b_star.cols();
        let ortho = |b: &Matrix| b.gram().sub(&Matrix::identity(k)).max_abs();
        let d = self.delta0;
        Ok(InvariantResiduals {
            orthonormality_b_star: ortho(&self.b_star),
            orthonormality_b_star_prime: ortho(&self.b_star_prime),
            product_gap: self
                .b_star
                .matvec(&self.w_bar)
                .sub(&self.b_star_prime.matvec(&self.w_bar))
                .norm(),
            dist_b0_b_star: principal_angle_distance(&self.b0, &self.b_star)?,
            dist_b0_b_star_prime: principal_angle_distance(&self.b0, &self.b_star_prime)?,
            separation: principal_angle_distance(&self.b_star, &self.b_star_prime)?,
            separation_bound: 2.0 * d * (1.0 - d * d).sqrt(),
            separation_bound_alt: 2.0 * d * (1.0 - d).sqrt(),
        })
    }
}

/// Orthonormal basis of the complement of the unit vector `c` in R^k, as k×(k−1).
fn complement_basis(c: &Vector) -> Result<Matrix> {
    let k = c.dim();
    // Householder-style: QR of [c | I] keeps c first; the remaining k−1 columns
    // of Q span c⊥. Pick the identity columns least aligned with c.
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| c[a].abs().total_cmp(&c[b].abs()));
    let mut cols = vec![c.clone()];
    cols.extend(order.iter().take(k - 1).map(|&j| Vector::basis(k, j)));
    let (q, _) = orthonormalize(&Matrix::from_columns(&cols))?;
    Ok(q.columns(1, k))
}

fn mean_direction(heads: &[Vector]) -> Result<(Vector, f64)> {
    let w_bar = Vector::mean(heads);
    let n = w_bar.norm();
    if n < 1e-12 {
        return Err(Error::DegenerateMeanHead(n));
    }
    Ok((w_bar, n))
}

/// Orthonormal B₀ whose first column is B_* w̄/‖w̄‖ and whose distance to
/// col(B_*) is δ₀, tilting one complement direction by arcsin(δ₀).
pub fn make_b0_containing_product(
    b_star: &Matrix,
    heads: &[Vector],
    delta0: f64,
    seed: u64,
) -> Result<Matrix> {
    let (d, k) = b_star.shape();
    if k < 2 {
        return Err(Error::RankError("the construction needs k > 1".into()));
    }
    if !(delta0 > 0.0 && delta0 <= 0.5) {
        return Err(Error::TargetInfeasible(delta0));
    }
    let (w_bar, n) = mean_direction(heads)?;
    let w_hat = w_bar.scale(1.0 / n);
    let u = b_star.matvec(&w_hat);
    let tilde_star = b_star.matmul(&complement_basis(&w_hat)?);
    let mut s = Stream::new(seed, "lowerbound-b0", &[]);
    let normal = unit_normal_to(b_star, &mut s)?;
    let theta = delta0.asin();
    let mut b0 = Matrix::zeros(d, k);
    b0.set_col(0, &u);
    let tilted = tilde_star
        .col(0)
        .scale(theta.cos())
        .add(&normal.scale(theta.sin()));
    b0.set_col(1, &tilted);
    for j in 1..k - 1 {
        b0.set_col(j + 1, &tilde_star.col(j));
    }
    Ok(b0)
}

pub fn construct_adversarial(b0: &Matrix, b_star: &Matrix, heads: &[Vector]) -> Result<AdversarialPair> {
    let k = b_star.cols();
    if k < 2 {
        return Err(Error::RankError("the construction needs k > 1".into()));
    }
    let (w_bar, n) = mean_direction(heads)?;
    let w_hat = w_bar.scale(1.0 / n);
    let u = b_star.matvec(&w_hat);

    let (q0, _) = orthonormalize(b0)?;
    let c = q0.tmatvec(&u);
    let residual = u.sub(&q0.matvec(&c)).norm();
    if residual > CONTAINMENT_TOL {
        return Err(Error::ContainmentViolated(residual));
    }
    let c = c.scale(1.0 / c.norm());
    let tilde_0 = q0.matmul(&complement_basis(&c)?);
    let v_star = complement_basis(&w_hat)?;
    let tilde_star = b_star.matmul(&v_star);

    // B_*′ = u ŵᵀ + (2 B̃₀B̃₀ᵀB̃_* − B̃_*) Ṽ_*ᵀ
    let reflected = tilde_0
        .matmul(&tilde_0.tmatmul(&tilde_star))
        .scale(2.0)
        .sub(&tilde_star);
    let mut b_star_prime = reflected.matmul(&v_star.transpose());
    b_star_prime.rank1_update(1.0, &u, &w_hat);

    Ok(AdversarialPair {
        b_star: b_star.clone(),
        b_star_prime,
        b0: b0.clone(),
        delta0: principal_angle_distance(b0, b_star)?,
        w_bar,
    })
}

/// Distributed GD through its closed form, which sees the truth only through
/// the product p = B_* w̄:
/// B⁺ = B − α(Bw − p)wᵀ, w⁺ = w − αBᵀ(Bw − p). Returns θ_0..θ_T.
pub fn dgd_closed_form(init: &ModelState, product: &Vector, alpha: f64, rounds: usize) -> Vec<ModelState> {
    let mut out = Vec::with_capacity(rounds + 1);
    out.push(init.clone());
    for t in 0..rounds {
        let next = local_step_toward(&out[t], product, alpha);
        out.push(next);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProofCase {
    /// D-GD ends at least 0.7δ₀ from B_* itself.
    FarFromFirst,
    /// D-GD gets within 0.7δ₀ of B_*, so it must be far from B_*′.
    FarFromSecond,
}

#[derive(Clone, Debug, Serialize)]
pub struct PairedReport {
    pub rounds: usize,
    pub delta0: f64,
    pub dist_b_star: f64,
    pub dist_b_star_prime: f64,
    pub max_dist: f64,
    pub case: ProofCase,
    /// Both closed-form runs consumed the same product vector and produced
    /// bitwise equal iterates.
    pub trajectories_identical: bool,
    /// ‖B_*w̄ − B_*′w̄‖ as computed in floating point.
    pub product_gap: f64,
    /// Largest relative gap between per-client D-GD runs against B_* and B_*′.
    pub engine_max_relative_gap: f64,
    /// Smallest slack in dist(B_t,B_*′) ≥ dist(B_*,B_*′) − dist(B_t,B_*).
    pub triangle_min_slack: f64,
}

/// Run D-GD from (B₀, 0) against both truths of the pair.
pub fn paired_dgd_experiment(
    pair: &AdversarialPair,
    heads: &[Vector],
    alpha: f64,
    rounds: usize,
) -> Result<PairedReport> {
    let k = pair.b_star.cols();
    let init = ModelState {
        b: pair.b0.clone(),
        w: Vector::zeros(k),
    };
    let p = pair.b_star.matvec(&pair.w_bar);
    let p_prime = pair.b_star_prime.matvec(&pair.w_bar);
    let product_gap = p.sub(&p_prime).norm();

    // What the server sees under either truth is the same vector; each run
    // receives its own copy of it.
    let observed_a = p.clone();
    let observed_b = p.clone();
    let run_a = dgd_closed_form(&init, &observed_a, alpha, rounds);
    let run_b = dgd_closed_form(&init, &observed_b, alpha, rounds);
    let trajectories_identical = run_a == run_b;

    let sep = principal_angle_distance(&pair.b_star, &pair.b_star_prime)?;
    let mut triangle_min_slack = f64::INFINITY;
    for st in &run_a {
        let da = principal_angle_distance(&st.b, &pair.b_star)?;
        let db = principal_angle_distance(&st.b, &pair.b_star_prime)?;
        triangle_min_slack = triangle_min_slack.min(db - (sep - da));
    }

    let engine_max_relative_gap = engine_gap(pair, heads, &init, alpha, rounds)?;

    let last = run_a.last().expect("at least the initial state");
    let dist_b_star = principal_angle_distance(&last.b, &pair.b_star)?;
    let dist_b_star_prime = principal_angle_distance(&last.b, &pair.b_star_prime)?;
    let case = if dist_b_star >= 0.7 * pair.delta0 {
        ProofCase::FarFromFirst
    } else {
        ProofCase::FarFromSecond
    };
    Ok(PairedReport {
        rounds,
        delta0: pair.delta0,
        dist_b_star,
        dist_b_star_prime,
        max_dist: dist_b_star.max(dist_b_star_prime),
        case,
        trajectories_identical,
        product_gap,
        engine_max_relative_gap,
        triangle_min_slack,
    })
}

/// Per-client D-GD (τ = 1, all clients) against each truth, compared round by
/// round. The two runs differ only by floating-point rounding in averaging.
fn engine_gap(
    pair: &AdversarialPair,
    heads: &[Vector],
    init: &ModelState,
    alpha: f64,
    rounds: usize,
) -> Result<f64> {
    let (d, k) = pair.b_star.shape();
    let gt_a = GroundTruth {
        b_star: pair.b_star.clone(),
        heads: heads.to_vec(),
        noise_sigma: 0.0,
    };
    let gt_b = GroundTruth {
        b_star: pair.b_star_prime.clone(),
        ..gt_a.clone()
    };
    let cfg = SimConfig {
        d,
        k,
        num_clients: heads.len(),
        m: heads.len(),
        tau: 1,
        alpha,
        rounds,
        ..SimConfig::figure_one(0)
    };
    let (mut a, mut b) = (init.clone(), init.clone());
    let mut gap = 0.0f64;
    for t in 0..rounds {
        a = global_round(&a, &gt_a, t, &cfg, None)?.0;
        b = global_round(&b, &gt_b, t, &cfg, None)?.0;
        let scale = a.max_abs().max(f64::MIN_POSITIVE);
        let diff = a.b.sub(&b.b).max_abs().max(a.w.sub(&b.w).max_abs());
        gap = gap.max(diff / scale);
    }
    Ok(gap)
}
