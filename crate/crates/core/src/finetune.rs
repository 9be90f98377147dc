//! Adapting a pretrained model to a new client with a single fixed batch.

use serde::Serialize;

use crate::engine::{local_step_finite, ModelState};
use crate::linalg::{Matrix, Vector};
use crate::problem::{sample_batch, GroundTruth};
use crate::rng::Stream;

#[derive(Clone, Debug, Serialize)]
pub struct FineTuneTrace {
    /// ‖B_s w_s − B_* w_new‖² for s = 0..=τ′.
    pub errors: Vec<f64>,
}

impl FineTuneTrace {
    pub fn final_error(&self) -> f64 {
        *self.errors.last().expect("trace holds at least the initial error")
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct FineTuneParams {
    pub tau_prime: usize,
    pub alpha_ft: f64,
    /// Number of samples n; the whole batch is used at every step.
    pub n: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

/// Full-batch GD on the new client's empirical loss, starting from the
/// pretrained (B, w).
pub fn finetune(
    pretrained: &ModelState,
    b_star: &Matrix,
    new_head: &Vector,
    params: &FineTuneParams,
) -> FineTuneTrace {
    assert!(params.tau_prime >= 1, "tau_prime must be >= 1");
    let client = GroundTruth {
        b_star: b_star.clone(),
        heads: vec![new_head.clone()],
        noise_sigma: params.noise_sigma,
    };
    let mut stream = Stream::new(params.seed, "finetune-batch", &[params.n as u64]);
    let batch = sample_batch(&client, 0, params.n, &mut stream);
    let target = b_star.matvec(new_head);
    let err = |s: &ModelState| {
        let r = s.b.matvec(&s.w).sub(&target);
        r.dot(&r)
    };
    let mut state = pretrained.clone();
    let mut errors = Vec::with_capacity(params.tau_prime + 1);
    errors.push(err(&state));
    for _ in 0..params.tau_prime {
        state = local_step_finite(&state, &batch, params.alpha_ft);
        errors.push(err(&state));
    }
    FineTuneTrace { errors }
}

/// Draw the head of the new client, w_{*,M+1} ~ N(0, I_k).
pub fn new_client_head(k: usize, seed: u64) -> Vector {
    Vector::from_vec(Stream::new(seed, "new-head", &[]).normals(k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::gen_ground_truth;

    #[test]
    fn optimal_start_stays_at_zero() {
        let gt = gen_ground_truth(8, 2, 1, 0.0, 1).unwrap();
        let head = new_client_head(2, 3);
        let st = ModelState {
            b: gt.b_star.clone(),
            w: head.clone(),
        };
        let p = FineTuneParams {
            tau_prime: 20,
            alpha_ft: 0.01,
            n: 5,
            noise_sigma: 0.0,
            seed: 1,
        };
        let tr = finetune(&st, &gt.b_star, &head, &p);
        assert_eq!(tr.errors.len(), 21);
        assert!(tr.errors.iter().all(|e| *e < 1e-28));
    }

    #[test]
    fn recovered_subspace_learns_head_exactly() {
        let gt = gen_ground_truth(8, 2, 1, 0.0, 5).unwrap();
        let head = new_client_head(2, 9);
        // A different basis of the same column space, head starting at zero.
        let mix = Matrix::from_rows(&[&[1.2, 0.3], &[-0.4, 0.9]]);
        let st = ModelState {
            b: gt.b_star.matmul(&mix),
            w: Vector::zeros(2),
        };
        let p = FineTuneParams {
            tau_prime: 3000,
            alpha_ft: 0.05,
            n: 40,
            noise_sigma: 0.0,
            seed: 2,
        };
        let tr = finetune(&st, &gt.b_star, &head, &p);
        assert!(tr.final_error() < 1e-8, "{}", tr.final_error());
    }
}
