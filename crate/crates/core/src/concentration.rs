//! Monte Carlo checks of empirical-Gram concentration and head subsampling.

use rayon::prelude::*;
use serde::Serialize;

use crate::engine::sample_clients;
use crate::linalg::{spectral_norm, Matrix, Vector};
use crate::problem::diversity_stats;
use crate::rng::Stream;

#[derive(Clone, Debug, Serialize)]
pub struct DeviationCurve {
    /// b for the single-Gram experiment, M for the averaged one.
    pub sample_sizes: Vec<usize>,
    pub mean_deviation: Vec<f64>,
    pub quantile95: Vec<f64>,
    /// Least-squares slope of log(mean deviation) against log(sample size);
    /// NaN when fewer than two sizes are given.
    pub fitted_slope: f64,
}

impl DeviationCurve {
    pub fn slope_defined(&self) -> bool {
        !self.fitted_slope.is_nan()
    }

    fn from_samples(sizes: &[usize], samples: Vec<Vec<f64>>) -> Self {
        let mean_deviation: Vec<f64> = samples
            .iter()
            .map(|s| s.iter().sum::<f64>() / s.len() as f64)
            .collect();
        let quantile95 = samples.into_iter().map(quantile95).collect();
        DeviationCurve {
            sample_sizes: sizes.to_vec(),
            fitted_slope: log_log_slope(sizes, &mean_deviation),
            mean_deviation,
            quantile95,
        }
    }
}

fn quantile95(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let idx = ((xs.len() as f64 * 0.95).ceil() as usize).clamp(1, xs.len()) - 1;
    xs[idx]
}

pub fn log_log_slope(x: &[usize], y: &[f64]) -> f64 {
    if x.len() < 2 {
        return f64::NAN;
    }
    let lx: Vec<f64> = x.iter().map(|v| (*v as f64).ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

fn gaussian(rows: usize, cols: usize, stream: &mut Stream) -> Matrix {
    Matrix::from_vec(rows, cols, stream.normals(rows * cols))
}

/// UᵀΣV − UᵀV for Σ = (1/b) XᵀX, X with b i.i.d. N(0, I_d) rows.
fn gram_error(u: &Matrix, v: &Matrix, b: usize, stream: &mut Stream) -> Matrix {
    let d = u.rows();
    let x = gaussian(b, d, stream);
    let xu = x.matmul(u);
    let xv = x.matmul(v);
    xu.tmatmul(&xv).scale(1.0 / b as f64).sub(&u.tmatmul(v))
}

fn client_factors(d: usize, d1: usize, d2: usize, i: usize, seed: u64) -> (Matrix, Matrix) {
    let u = gaussian(d, d1, &mut Stream::new(seed, "conc-U", &[i as u64]));
    let v = gaussian(d, d2, &mut Stream::new(seed, "conc-V", &[i as u64]));
    (u, v)
}

fn x_stream(seed: u64, trial: usize, b: usize, client: usize) -> Stream {
    Stream::new(seed, "conc-X", &[trial as u64, b as u64, client as u64])
}

/// ‖UᵀΣV − UᵀV‖₂ against b for fixed Gaussian U (d×d₁), V (d×d₂).
pub fn gram_deviation_experiment(
    d: usize,
    d1: usize,
    d2: usize,
    b_values: &[usize],
    trials: usize,
    seed: u64,
) -> DeviationCurve {
    let (u, v) = client_factors(d, d1, d2, 0, seed);
    gram_deviation_with(&u, &v, b_values, trials, seed)
}

/// As [`gram_deviation_experiment`] with caller-supplied U and V.
pub fn gram_deviation_with(
    u: &Matrix,
    v: &Matrix,
    b_values: &[usize],
    trials: usize,
    seed: u64,
) -> DeviationCurve {
    let samples = b_values
        .iter()
        .map(|&b| {
            (0..trials)
                .into_par_iter()
                .map(|trial| {
                    let e = gram_error(u, v, b, &mut x_stream(seed, trial, b, 0));
                    spectral_norm(&e).expect("finite deviation")
                })
                .collect()
        })
        .collect();
    DeviationCurve::from_samples(b_values, samples)
}

/// ‖(1/M) Σ_i (U_iᵀΣ_iV_i − U_iᵀV_i)‖₂ against M at fixed b.
pub fn averaged_gram_deviation_experiment(
    d: usize,
    d1: usize,
    d2: usize,
    m_values: &[usize],
    b: usize,
    trials: usize,
    seed: u64,
) -> DeviationCurve {
    let max_m = m_values.iter().copied().max().unwrap_or(0);
    let factors: Vec<(Matrix, Matrix)> = (0..max_m).map(|i| client_factors(d, d1, d2, i, seed)).collect();
    averaged_gram_deviation_with(&factors, m_values, b, trials, seed)
}

/// Averaged experiment over caller-supplied (U_i, V_i); the first M pairs are
/// used for each M.
pub fn averaged_gram_deviation_with(
    factors: &[(Matrix, Matrix)],
    m_values: &[usize],
    b: usize,
    trials: usize,
    seed: u64,
) -> DeviationCurve {
    let samples = m_values
        .iter()
        .map(|&m| {
            assert!(m >= 1 && m <= factors.len(), "M out of range");
            (0..trials)
                .into_par_iter()
                .map(|trial| {
                    let (u0, v0) = &factors[0];
                    let mut acc = Matrix::zeros(u0.cols(), v0.cols());
                    for (i, (u, v)) in factors[..m].iter().enumerate() {
                        acc.axpy(1.0, &gram_error(u, v, b, &mut x_stream(seed, trial, b, i)));
                    }
                    let acc = acc.scale(1.0 / m as f64);
                    spectral_norm(&acc).expect("finite deviation")
                })
                .collect()
        })
        .collect();
    DeviationCurve::from_samples(m_values, samples)
}

/// Smallest m for which the subsampling event is guaranteed, capped at M:
/// 20((γ/L)² + (H/L)⁴)(αL)⁻⁴ log(kT).
pub fn head_sampling_threshold(heads: &[Vector], alpha: f64, rounds: usize) -> usize {
    let s = diversity_stats(heads);
    let k = heads[0].dim();
    let l = s.l_max;
    let raw = 20.0 * ((s.gamma / l).powi(2) + (s.h / l).powi(4)) * (alpha * l).powi(-4)
        * ((k * rounds) as f64).ln();
    if raw.is_finite() && raw < heads.len() as f64 {
        (raw.ceil() as usize).max(1)
    } else {
        heads.len()
    }
}

/// Fraction of trials in which, for every one of `rounds` sampled client sets,
/// ‖mean sampled head − w̄‖ ≤ 4α²L³ and
/// ‖(1/m)Σ w wᵀ − (1/M)Σ w wᵀ‖₂ ≤ 4α²L⁴.
pub fn head_sampling_event_rate(
    heads: &[Vector],
    m: usize,
    alpha: f64,
    rounds: usize,
    trials: usize,
    seed: u64,
) -> f64 {
    let total = heads.len();
    let k = heads[0].dim();
    let s = diversity_stats(heads);
    let l = s.l_max;
    let mean_bound = 4.0 * alpha * alpha * l.powi(3);
    let second_bound = 4.0 * alpha * alpha * l.powi(4);
    let mut second = Matrix::zeros(k, k);
    for w in heads {
        second.rank1_update(1.0 / total as f64, w, w);
    }
    let hits: usize = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let trial_seed = Stream::new(seed, "a0-trial", &[trial as u64]).next_u64();
            let ok = (0..rounds).all(|t| {
                let idx = sample_clients(total, m, t, trial_seed).expect("m <= M");
                let sampled: Vec<Vector> = idx.iter().map(|&i| heads[i].clone()).collect();
                let mean_gap = Vector::mean(&sampled).sub(&s.w_bar).norm();
                if mean_gap > mean_bound {
                    return false;
                }
                let mut sec = Matrix::zeros(k, k);
                for w in &sampled {
                    sec.rank1_update(1.0 / m as f64, w, w);
                }
                let gap = spectral_norm(&sec.sub(&second)).expect("finite");
                gap <= second_bound
            });
            usize::from(ok)
        })
        .sum();
    hits as f64 / trials as f64
}
