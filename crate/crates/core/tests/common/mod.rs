#![allow(dead_code)]

pub mod jacobi;

use fedrep::linalg::{Matrix, Vector};
use fedrep::monitors::theorem_step_size;
use fedrep::problem::{diversity_stats, gen_ground_truth, GroundTruth};
use fedrep::rng::Stream;
use fedrep::{ModelState, MonitorConstants, SimConfig};

pub fn gaussian_matrix(rows: usize, cols: usize, seed: u64, tag: &str) -> Matrix {
    Matrix::from_vec(rows, cols, Stream::new(seed, tag, &[]).normals(rows * cols))
}

pub fn gaussian_vector(n: usize, seed: u64, tag: &str) -> Vector {
    Vector::from_vec(Stream::new(seed, tag, &[]).normals(n))
}

/// Orthonormal columns by modified Gram-Schmidt with one reorthogonalisation
/// pass. Returned column-major.
pub fn gram_schmidt(a: &Matrix) -> Vec<Vec<f64>> {
    let (d, k) = a.shape();
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(k);
    for j in 0..k {
        let mut v: Vec<f64> = (0..d).map(|i| a[(i, j)]).collect();
        for _ in 0..2 {
            for u in &q {
                let c: f64 = u.iter().zip(&v).map(|(x, y)| x * y).sum();
                for (vi, ui) in v.iter_mut().zip(u) {
                    *vi -= c * ui;
                }
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        q.push(v.into_iter().map(|x| x / n).collect());
    }
    q
}

/// σ_max((I − Q₁Q₁ᵀ)Q₂) computed with Gram-Schmidt and Jacobi.
pub fn oracle_distance(b1: &Matrix, b2: &Matrix) -> f64 {
    let q1 = gram_schmidt(b1);
    let q2 = gram_schmidt(b2);
    let d = b1.rows();
    let k2 = q2.len();
    let mut resid = vec![0.0; d * k2];
    for (j, v) in q2.iter().enumerate() {
        let mut r = v.clone();
        for u in &q1 {
            let c: f64 = u.iter().zip(v).map(|(x, y)| x * y).sum();
            for (ri, ui) in r.iter_mut().zip(u) {
                *ri -= c * ui;
            }
        }
        for i in 0..d {
            resid[i * k2 + j] = r[i];
        }
    }
    jacobi::singular_values(d, k2, &resid)[0]
}

/// σ_min(Q₁ᵀQ₂) for Gram-Schmidt bases of the two column spaces.
pub fn oracle_cos_min(b1: &Matrix, b2: &Matrix) -> f64 {
    let q1 = gram_schmidt(b1);
    let q2 = gram_schmidt(b2);
    let mut m = vec![0.0; q1.len() * q2.len()];
    for (i, u) in q1.iter().enumerate() {
        for (j, v) in q2.iter().enumerate() {
            m[i * q2.len() + j] = u.iter().zip(v).map(|(x, y)| x * y).sum();
        }
    }
    *jacobi::singular_values(q1.len(), q2.len(), &m).last().unwrap()
}

pub fn oracle_singular_values(a: &Matrix) -> Vec<f64> {
    jacobi::singular_values(a.rows(), a.cols(), a.as_slice())
}

/// Central differences of `f` at `x` with step `h`.
pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Population recipe with the largest step size the convergence theorem
/// allows for the generated heads.
pub fn theorem_config(
    d: usize,
    k: usize,
    num_clients: usize,
    tau: usize,
    delta0: f64,
    rounds: usize,
    seed: u64,
) -> SimConfig {
    let gt = gen_ground_truth(d, k, num_clients, 0.0, seed).unwrap();
    let stats = diversity_stats(&gt.heads);
    let alpha = theorem_step_size(&stats, tau, delta0, &MonitorConstants::default()).unwrap();
    SimConfig {
        d,
        k,
        num_clients,
        m: num_clients,
        tau,
        alpha,
        rounds,
        delta0_target: Some(delta0),
        monitor: true,
        ..SimConfig::figure_one(seed)
    }
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn pack(s: &ModelState) -> Vec<f64> {
    let mut x = s.b.as_slice().to_vec();
    x.extend_from_slice(s.w.as_slice());
    x
}

pub fn unpack(x: &[f64], d: usize, k: usize) -> (Matrix, Vector) {
    let b = Matrix::from_vec(d, k, x[..d * k].to_vec());
    (b, Vector::from_vec(x[d * k..].to_vec()))
}

/// Gradient implied by a unit-step update: θ − step(θ).
pub fn implied_gradient(before: &ModelState, after: &ModelState) -> Vec<f64> {
    pack(before).iter().zip(pack(after)).map(|(a, b)| a - b).collect()
}

pub fn fd_instance(i: u64) -> (GroundTruth, ModelState) {
    let mut s = Stream::new(i, "fd-dims", &[]);
    let d = 2 + s.below(7) as usize;
    let k = 1 + s.below(3.min(d as u64 - 1)) as usize;
    let gt = gen_ground_truth(d, k, 3, 0.1, i).unwrap();
    let st = ModelState {
        b: gaussian_matrix(d, k, i, "fd-b"),
        w: gaussian_vector(k, i, "fd-w"),
    };
    (gt, st)
}

pub fn max_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
