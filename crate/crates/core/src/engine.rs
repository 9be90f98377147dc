//! FedAvg / D-GD rounds in the population and finite-sample regimes.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::monitors::{Monitor, MonitorConstants, RoundMetrics};
use crate::problem::{gen_ground_truth, gen_init, sample_batch, Batch, GroundTruth};
use crate::rng::Stream;

const DIVERGENCE_LIMIT: f64 = 1e12;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub b: Matrix,
    pub w: Vector,
}

impl ModelState {
    pub fn max_abs(&self) -> f64 {
        self.b.max_abs().max(self.w.max_abs())
    }

    fn is_sane(&self) -> bool {
        self.b.is_finite() && self.w.is_finite() && self.max_abs() <= DIVERGENCE_LIMIT
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regime {
    Population,
    FiniteSample { batch_size: usize },
}

#[derive(Clone, Debug, Serialize)]
pub struct SimConfig {
    pub d: usize,
    pub k: usize,
    /// Total number of clients, M.
    pub num_clients: usize,
    /// Clients sampled per round, m.
    pub m: usize,
    pub tau: usize,
    pub alpha: f64,
    pub rounds: usize,
    pub regime: Regime,
    pub noise_sigma: f64,
    pub seed: u64,
    pub delta0_target: Option<f64>,
    pub constants: MonitorConstants,
    /// Check the inductive hypotheses and prior-weight diagnostic each round.
    /// Basic observables (distance, gradient norm) are always recorded.
    pub monitor: bool,
}

impl SimConfig {
    /// The linear-regression recipe: d=100, k=5, M=m=40, τ=2, α=0.4.
    pub fn figure_one(seed: u64) -> Self {
        SimConfig {
            d: 100,
            k: 5,
            num_clients: 40,
            m: 40,
            tau: 2,
            alpha: 0.4,
            rounds: 2000,
            regime: Regime::Population,
            noise_sigma: 0.0,
            seed,
            delta0_target: None,
            constants: MonitorConstants::default(),
            monitor: false,
        }
    }

    /// Same configuration run as distributed GD: τ = 1, all clients.
    pub fn as_dgd(&self) -> Self {
        SimConfig {
            tau: 1,
            m: self.num_clients,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k >= self.d {
            return Err(Error::DimensionError(format!(
                "need 1 <= k < d, got d={}, k={}",
                self.d, self.k
            )));
        }
        if self.m == 0 || self.m > self.num_clients {
            return Err(Error::InvalidSampleSize {
                m: self.m,
                total: self.num_clients,
            });
        }
        if self.tau == 0 {
            return Err(Error::DimensionError("tau must be >= 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::DimensionError(format!("alpha must be positive, got {}", self.alpha)));
        }
        if let Regime::FiniteSample { batch_size: 0 } = self.regime {
            return Err(Error::DimensionError("batch size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Local iterates θ_{t,i,0..τ} of one client in one round.
#[derive(Clone, Debug)]
pub struct LocalTrajectory {
    pub client: usize,
    pub states: Vec<ModelState>,
}

/// One gradient step on ½‖Bw − target‖², both blocks at the incoming point.
pub fn local_step_toward(state: &ModelState, target: &Vector, alpha: f64) -> ModelState {
    let r = state.b.matvec(&state.w).sub(target);
    let mut b = state.b.clone();
    b.rank1_update(-alpha, &r, &state.w);
    let mut w = state.w.clone();
    w.axpy(-alpha, &state.b.tmatvec(&r));
    ModelState { b, w }
}

/// Exact-gradient local step on f_i(B, w) = ½‖Bw − B_* w_{*,i}‖².
pub fn local_step_population(
    state: &ModelState,
    b_star: &Matrix,
    w_star_i: &Vector,
    alpha: f64,
) -> ModelState {
    local_step_toward(state, &b_star.matvec(w_star_i), alpha)
}

/// Mini-batch step on (1/2b)‖y − XBw‖².
pub fn local_step_finite(state: &ModelState, batch: &Batch, alpha: f64) -> ModelState {
    let b_size = batch.x.rows() as f64;
    let resid = batch.x.matvec(&state.b.matvec(&state.w)).sub(&batch.y);
    // g = Xᵀ(XBw − y) / b, the d-dimensional residual pulled back to input space.
    let g = batch.x.tmatvec(&resid).scale(1.0 / b_size);
    let mut b = state.b.clone();
    b.rank1_update(-alpha, &g, &state.w);
    let mut w = state.w.clone();
    w.axpy(-alpha, &state.b.tmatvec(&g));
    ModelState { b, w }
}

pub fn run_local(
    state: &ModelState,
    gt: &GroundTruth,
    client: usize,
    round_t: usize,
    config: &SimConfig,
) -> LocalTrajectory {
    let mut states = Vec::with_capacity(config.tau + 1);
    states.push(state.clone());
    let target = gt.b_star.matvec(&gt.heads[client]);
    for s in 0..config.tau {
        let cur = &states[s];
        let next = match config.regime {
            Regime::Population => local_step_toward(cur, &target, config.alpha),
            Regime::FiniteSample { batch_size } => {
                let mut stream =
                    Stream::new(config.seed, "batch", &[round_t as u64, client as u64, s as u64]);
                let batch = sample_batch(gt, client, batch_size, &mut stream);
                local_step_finite(cur, &batch, config.alpha)
            }
        };
        states.push(next);
    }
    LocalTrajectory { client, states }
}

/// m distinct client indices for round t, sorted ascending.
pub fn sample_clients(num_clients: usize, m: usize, round_t: usize, seed: u64) -> Result<Vec<usize>> {
    if m == 0 || m > num_clients {
        return Err(Error::InvalidSampleSize {
            m,
            total: num_clients,
        });
    }
    let mut idx: Vec<usize> = (0..num_clients).collect();
    if m < num_clients {
        let mut s = Stream::new(seed, "clients", &[round_t as u64]);
        for j in 0..m {
            let pick = j + s.below((num_clients - j) as u64) as usize;
            idx.swap(j, pick);
        }
        idx.truncate(m);
        idx.sort_unstable();
    }
    Ok(idx)
}

/// Equal-weight average of the final local states, summed in slice order.
pub fn average_states(trajectories: &[LocalTrajectory]) -> ModelState {
    let last = &trajectories[0].states[trajectories[0].states.len() - 1];
    let mut b = Matrix::zeros(last.b.rows(), last.b.cols());
    let mut w = Vector::zeros(last.w.dim());
    for tr in trajectories {
        let s = tr.states.last().expect("nonempty trajectory");
        b.axpy(1.0, &s.b);
        w.axpy(1.0, &s.w);
    }
    let inv = 1.0 / trajectories.len() as f64;
    ModelState {
        b: b.scale(inv),
        w: w.scale(inv),
    }
}

/// One FedAvg round from θ_t. Returns θ_{t+1}, and metrics when a monitor is
/// supplied.
pub fn global_round(
    state: &ModelState,
    gt: &GroundTruth,
    round_t: usize,
    config: &SimConfig,
    monitor: Option<&mut Monitor>,
) -> Result<(ModelState, Option<RoundMetrics>)> {
    let clients = sample_clients(gt.num_clients(), config.m, round_t, config.seed)?;
    let trajectories: Vec<LocalTrajectory> = clients
        .par_iter()
        .map(|&i| run_local(state, gt, i, round_t, config))
        .collect();
    let next = average_states(&trajectories);
    if !next.is_sane() {
        return Err(Error::Diverged {
            round: round_t + 1,
            partial: Box::default(),
        });
    }
    let metrics = match monitor {
        Some(mon) => Some(mon.observe(round_t + 1, &next, &clients, &trajectories)?),
        None => None,
    };
    Ok((next, metrics))
}

/// Run `config.rounds` rounds from a given instance and initialisation.
pub fn run_training_from(
    gt: &GroundTruth,
    init: &ModelState,
    config: &SimConfig,
) -> Result<(ModelState, Vec<RoundMetrics>)> {
    config.validate()?;
    let mut monitor = Monitor::new(gt, init, config)?;
    let mut state = init.clone();
    let mut metrics = Vec::with_capacity(config.rounds);
    for t in 0..config.rounds {
        match global_round(&state, gt, t, config, Some(&mut monitor)) {
            Ok((next, m)) => {
                state = next;
                metrics.extend(m);
            }
            Err(Error::Diverged { round, .. }) => {
                return Err(Error::Diverged {
                    round,
                    partial: Box::new(metrics),
                })
            }
            Err(e) => return Err(e),
        }
    }
    Ok((state, metrics))
}

/// Build the instance and initialisation from the config seed, then train.
pub fn run_training(config: &SimConfig) -> Result<(ModelState, Vec<RoundMetrics>)> {
    let (gt, init) = build_instance(config)?;
    run_training_from(&gt, &init, config)
}

pub fn build_instance(config: &SimConfig) -> Result<(GroundTruth, ModelState)> {
    config.validate()?;
    let gt = gen_ground_truth(config.d, config.k, config.num_clients, config.noise_sigma, config.seed)?;
    let init = gen_init(&gt, config.alpha, config.delta0_target, config.seed)?;
    Ok((gt, init))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> SimConfig {
        SimConfig {
            d: 6,
            k: 2,
            num_clients: 4,
            m: 4,
            tau: 2,
            alpha: 0.1,
            rounds: 3,
            ..SimConfig::figure_one(1)
        }
    }

    #[test]
    fn zero_residual_step_is_fixed_point() {
        let gt = gen_ground_truth(5, 2, 1, 0.0, 3).unwrap();
        // B = B_* and w = w_* give Bw = B_* w_*.
        let st = ModelState {
            b: gt.b_star.clone(),
            w: gt.heads[0].clone(),
        };
        let next = local_step_population(&st, &gt.b_star, &gt.heads[0], 0.3);
        assert_eq!(next, st);
    }

    #[test]
    fn zero_head_only_moves_w() {
        let gt = gen_ground_truth(5, 2, 1, 0.0, 3).unwrap();
        let st = ModelState {
            b: Matrix::from_fn(5, 2, |i, j| (i + 2 * j) as f64 * 0.1),
            w: Vector::zeros(2),
        };
        let next = local_step_population(&st, &gt.b_star, &gt.heads[0], 0.3);
        assert_eq!(next.b, st.b);
        let expect = st.b.tmatvec(&gt.b_star.matvec(&gt.heads[0])).scale(0.3);
        assert!(next.w.sub(&expect).max_abs() < 1e-15);
    }

    #[test]
    fn noiseless_exact_batch_is_fixed_point() {
        let gt = gen_ground_truth(5, 2, 1, 0.0, 3).unwrap();
        let st = ModelState {
            b: gt.b_star.clone(),
            w: gt.heads[0].clone(),
        };
        let mut s = Stream::new(0, "t", &[]);
        let batch = sample_batch(&gt, 0, 8, &mut s);
        let next = local_step_finite(&st, &batch, 0.2);
        assert!(next.b.sub(&st.b).max_abs() < 1e-14);
        assert!(next.w.sub(&st.w).max_abs() < 1e-14);
    }

    #[test]
    fn trajectory_lengths_and_composition() {
        let cfg = small_config();
        let (gt, init) = build_instance(&cfg).unwrap();
        let one = run_local(&init, &gt, 0, 0, &SimConfig { tau: 1, ..cfg.clone() });
        assert_eq!(one.states.len(), 2);
        let two = run_local(&init, &gt, 2, 0, &cfg);
        let manual = local_step_population(
            &local_step_population(&init, &gt.b_star, &gt.heads[2], cfg.alpha),
            &gt.b_star,
            &gt.heads[2],
            cfg.alpha,
        );
        assert_eq!(two.states[0], init);
        assert_eq!(two.states[2], manual);
    }

    #[test]
    fn client_sampling_contract() {
        assert_eq!(sample_clients(5, 5, 3, 1).unwrap(), vec![0, 1, 2, 3, 4]);
        let one = sample_clients(7, 1, 0, 1).unwrap();
        assert!(one.len() == 1 && one[0] < 7);
        let s = sample_clients(10, 4, 12, 9).unwrap();
        assert_eq!(s, sample_clients(10, 4, 12, 9).unwrap());
        let mut dedup = s.clone();
        dedup.dedup();
        assert_eq!(dedup.len(), 4);
        assert!(matches!(
            sample_clients(3, 4, 0, 0),
            Err(Error::InvalidSampleSize { .. })
        ));
    }

    #[test]
    fn sampling_frequency_is_uniform() {
        let mut counts = [0usize; 10];
        let rounds = 100_000;
        for t in 0..rounds {
            for i in sample_clients(10, 3, t, 77).unwrap() {
                counts[i] += 1;
            }
        }
        for c in counts {
            let rate = c as f64 / rounds as f64;
            assert!((rate - 0.3).abs() < 0.01, "{rate}");
        }
    }

    #[test]
    fn shared_head_average_equals_single_client() {
        let cfg = small_config();
        let (mut gt, init) = build_instance(&cfg).unwrap();
        let h = gt.heads[0].clone();
        for w in gt.heads.iter_mut() {
            *w = h.clone();
        }
        let (next, _) = global_round(&init, &gt, 0, &cfg, None).unwrap();
        let single = run_local(&init, &gt, 3, 0, &cfg);
        assert!(next.b.sub(&single.states[2].b).max_abs() < 1e-14);
        assert!(next.w.sub(&single.states[2].w).max_abs() < 1e-14);
    }

    #[test]
    fn two_clients_one_step_average() {
        let cfg = SimConfig {
            num_clients: 2,
            m: 2,
            tau: 1,
            ..small_config()
        };
        let (gt, init) = build_instance(&cfg).unwrap();
        let (next, _) = global_round(&init, &gt, 0, &cfg, None).unwrap();
        let a = local_step_population(&init, &gt.b_star, &gt.heads[0], cfg.alpha);
        let b = local_step_population(&init, &gt.b_star, &gt.heads[1], cfg.alpha);
        assert_eq!(next.b, a.b.add(&b.b).scale(0.5));
        assert_eq!(next.w, a.w.add(&b.w).scale(0.5));
    }

    #[test]
    fn zero_rounds_returns_init() {
        let cfg = SimConfig {
            rounds: 0,
            ..small_config()
        };
        let (gt, init) = build_instance(&cfg).unwrap();
        let (fin, metrics) = run_training_from(&gt, &init, &cfg).unwrap();
        assert_eq!(fin, init);
        assert!(metrics.is_empty());
    }

    #[test]
    fn large_step_diverges_with_partial_metrics() {
        let cfg = SimConfig {
            alpha: 50.0,
            rounds: 500,
            ..small_config()
        };
        let (gt, mut init) = build_instance(&cfg).unwrap();
        init.w = Vector::from_vec(vec![1.0, 1.0]);
        match run_training_from(&gt, &init, &cfg) {
            Err(Error::Diverged { round, partial }) => {
                assert_eq!(partial.len(), round - 1);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
