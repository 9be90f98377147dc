//! Per-round observables and runtime checks of the inductive hypotheses.
//!
//! Global hypotheses (evaluated on θ_t after the round that produced it):
//!
//! * A1: ‖w_t − α(I + Δ_t)B_tᵀB_* w̄‖ ≤ 91 α^2.5 τ L³, where w̄ is the mean head
//!   of the clients sampled in the round that produced θ_t
//! * A2: ‖w_t‖ ≤ 2√α L
//! * A3: ‖Δ_t‖ ≤ c₃ α² τ L² κ² / E₀, with Δ_t = I − αB_tᵀB_t
//! * A4: ‖B_{*,⊥}ᵀB_t‖ ≤ (1 − ρ)‖B_{*,⊥}ᵀB_{t−1}‖ with ρ = 0.04 α² τ μ² E₀
//! * A5: dist_t ≤ (1 − ρ)^(t−1)
//!
//! Local hypotheses for each sampled client and s' = 1..τ:
//!
//! * A1_loc: ‖w_{s'} − αB_{s'−1}ᵀB_* w_{*,i}‖ ≤ 4c₃ α^2.5 τ L³ κ² / E₀
//! * A2_loc: ‖w_{s'}‖ ≤ 2√α L
//! * A3_loc: ‖Δ_{s'}‖ ≤ 2c₃ α² τ L² κ² / E₀
//! * A4_loc: dist(B_{s'}) ≤ 1.1 dist(B_t)
//!
//! Bounds that involve κ or μ are reported as [`Check::NotApplicable`] when
//! μ = 0.

use serde::{Serialize, Serializer};

use crate::engine::{LocalTrajectory, ModelState, Regime, SimConfig};
use crate::error::{Error, Result};
use crate::linalg::{min_eig_psd, min_singular_value, perp_norm, principal_angle_distance, spectral_norm, Matrix, Vector};
use crate::problem::{diversity_stats, DiversityStats, GroundTruth};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MonitorConstants {
    pub c3: f64,
    pub rate_const: f64,
    pub a1_const: f64,
    pub w_norm_factor: f64,
    pub local_a1_factor: f64,
    pub local_a3_factor: f64,
    pub local_dist_factor: f64,
}

impl Default for MonitorConstants {
    fn default() -> Self {
        MonitorConstants {
            c3: 4800.0,
            rate_const: 0.04,
            a1_const: 91.0,
            w_norm_factor: 2.0,
            local_a1_factor: 4.0,
            local_a3_factor: 2.0,
            local_dist_factor: 1.1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Check {
    Pass,
    Fail,
    NotApplicable,
}

impl Check {
    fn from_le(value: f64, bound: Option<f64>) -> Check {
        match bound {
            None => Check::NotApplicable,
            Some(b) if value <= b => Check::Pass,
            Some(_) => Check::Fail,
        }
    }

    /// Conjunction over rounds: any failure wins, then not-applicable.
    pub fn and(self, other: Check) -> Check {
        use Check::*;
        match (self, other) {
            (Fail, _) | (_, Fail) => Fail,
            (NotApplicable, _) | (_, NotApplicable) => NotApplicable,
            _ => Pass,
        }
    }

    pub fn is_pass(self) -> bool {
        self == Check::Pass
    }

    /// "1", "0" or "NA".
    pub fn as_str(self) -> &'static str {
        match self {
            Check::Pass => "1",
            Check::Fail => "0",
            Check::NotApplicable => "NA",
        }
    }
}

impl Serialize for Check {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Check::Pass => s.serialize_bool(true),
            Check::Fail => s.serialize_bool(false),
            Check::NotApplicable => s.serialize_none(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GlobalFlags {
    pub a1: Check,
    pub a2: Check,
    pub a3: Check,
    pub a4: Check,
    pub a5: Check,
}

impl GlobalFlags {
    fn and(self, o: GlobalFlags) -> GlobalFlags {
        GlobalFlags {
            a1: self.a1.and(o.a1),
            a2: self.a2.and(o.a2),
            a3: self.a3.and(o.a3),
            a4: self.a4.and(o.a4),
            a5: self.a5.and(o.a5),
        }
    }

    pub fn all(&self) -> [Check; 5] {
        [self.a1, self.a2, self.a3, self.a4, self.a5]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LocalFlags {
    pub a1: Check,
    pub a2: Check,
    pub a3: Check,
    pub a4: Check,
}

impl LocalFlags {
    pub fn all(&self) -> [Check; 4] {
        [self.a1, self.a2, self.a3, self.a4]
    }
}

/// Worst value-minus-bound over all (client, s') pairs; nonpositive means the
/// hypothesis held. NaN when the bound is not applicable.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LocalReport {
    pub worst_excess: [f64; 4],
    pub flags: LocalFlags,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RoundMetrics {
    /// Index of the state this row describes; the first round yields t = 1.
    pub t: usize,
    pub dist: f64,
    pub delta_norm: f64,
    pub w_norm: f64,
    pub grad_norm_global: f64,
    pub a1_residual: f64,
    pub perp_norm: f64,
    pub perp_norm_prev: f64,
    pub e0: f64,
    pub global_flags: Option<GlobalFlags>,
    pub local: Option<LocalReport>,
    pub prior_weight_measured: Option<f64>,
    pub prior_weight_predicted: Option<f64>,
}

/// Numeric thresholds derived from the diversity statistics and step size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Bounds {
    pub a1: f64,
    pub a2: f64,
    pub a3: Option<f64>,
    pub rate: Option<f64>,
    pub a1_loc: Option<f64>,
    pub a2_loc: f64,
    pub a3_loc: Option<f64>,
    pub a4_loc_factor: f64,
}

impl Bounds {
    pub fn new(stats: &DiversityStats, alpha: f64, tau: usize, e0: f64, c: &MonitorConstants) -> Bounds {
        let l = stats.l_max;
        let tau = tau as f64;
        let diverse = stats.mu > 0.0 && e0 > 0.0;
        let k2 = stats.kappa_max * stats.kappa_max;
        let a3 = c.c3 * alpha.powi(2) * tau * l * l * k2 / e0;
        let a1_loc = c.local_a1_factor * c.c3 * alpha.powf(2.5) * tau * l.powi(3) * k2 / e0;
        let rate = c.rate_const * alpha.powi(2) * tau * stats.mu.powi(2) * e0;
        let when = |v: f64| if diverse { Some(v) } else { None };
        Bounds {
            a1: c.a1_const * alpha.powf(2.5) * tau * l.powi(3),
            a2: c.w_norm_factor * alpha.sqrt() * l,
            a3: when(a3),
            rate: when(rate),
            a1_loc: when(a1_loc),
            a2_loc: c.w_norm_factor * alpha.sqrt() * l,
            a3_loc: when(c.local_a3_factor * a3),
            a4_loc_factor: c.local_dist_factor,
        }
    }
}

/// Largest step size covered by the convergence guarantee,
/// (1 − δ₀) / (c₃ √τ L κ²). None when μ = 0.
pub fn theorem_step_size(stats: &DiversityStats, tau: usize, delta0: f64, c: &MonitorConstants) -> Option<f64> {
    if stats.mu > 0.0 && stats.l_max > 0.0 {
        let k2 = stats.kappa_max * stats.kappa_max;
        Some((1.0 - delta0) / (c.c3 * (tau as f64).sqrt() * stats.l_max * k2))
    } else {
        None
    }
}

/// The contraction-rate bound (1 − ρ)^(t−1); 1 at t = 1.
fn a5_bound(rate: f64, t: usize) -> f64 {
    (1.0 - rate).powi(t.saturating_sub(1) as i32)
}

fn global_checks(m: &RoundMetrics, b: &Bounds) -> GlobalFlags {
    GlobalFlags {
        a1: Check::from_le(m.a1_residual, Some(b.a1)),
        a2: Check::from_le(m.w_norm, Some(b.a2)),
        a3: Check::from_le(m.delta_norm, b.a3),
        a4: Check::from_le(m.perp_norm, b.rate.map(|r| (1.0 - r) * m.perp_norm_prev)),
        a5: Check::from_le(m.dist, b.rate.map(|r| a5_bound(r, m.t))),
    }
}

/// True (Pass) for each global hypothesis iff it held at every recorded round.
pub fn check_global_hypotheses(
    trajectory: &[RoundMetrics],
    stats: &DiversityStats,
    alpha: f64,
    tau: usize,
    constants: &MonitorConstants,
) -> GlobalFlags {
    assert!(!trajectory.is_empty(), "empty trajectory");
    let bounds = Bounds::new(stats, alpha, tau, trajectory[0].e0, constants);
    trajectory
        .iter()
        .map(|m| global_checks(m, &bounds))
        .reduce(GlobalFlags::and)
        .expect("nonempty")
}

/// ‖∇F(B, w)‖ for F = (1/M)Σ f_i, i.e. (‖BᵀR‖² + ‖R wᵀ‖_F²)^½ with
/// R = Bw − B_* w̄.
pub fn global_grad_norm(state: &ModelState, gt: &GroundTruth) -> f64 {
    let target = gt.b_star.matvec(&gt.mean_head());
    grad_norm_toward(state, &target)
}

pub(crate) fn grad_norm_toward(state: &ModelState, target: &Vector) -> f64 {
    let r = state.b.matvec(&state.w).sub(target);
    let gw = state.b.tmatvec(&r);
    let gb_sq = r.dot(&r) * state.w.dot(&state.w);
    (gw.dot(&gw) + gb_sq).sqrt()
}

fn delta_norm(b: &Matrix, alpha: f64) -> Result<f64> {
    let k = b.cols();
    spectral_norm(&Matrix::identity(k).sub(&b.gram().scale(alpha)))
}

/// Local hypotheses for one round's trajectories.
pub fn check_local_hypotheses(
    trajectories: &[LocalTrajectory],
    gt: &GroundTruth,
    dist_t: f64,
    alpha: f64,
    bounds: &Bounds,
) -> Result<LocalReport> {
    let mut worst = [f64::NEG_INFINITY; 4];
    let mut pass = [true; 4];
    let mut update = |slot: usize, value: f64, bound: f64| {
        worst[slot] = worst[slot].max(value - bound);
        if value > bound {
            pass[slot] = false;
        }
    };
    for tr in trajectories {
        let target = gt.b_star.matvec(&gt.heads[tr.client]);
        for s in 1..tr.states.len() {
            let prev = &tr.states[s - 1];
            let cur = &tr.states[s];
            if let Some(b1) = bounds.a1_loc {
                let pred = prev.b.tmatvec(&target).scale(alpha);
                update(0, cur.w.sub(&pred).norm(), b1);
            }
            update(1, cur.w.norm(), bounds.a2_loc);
            if let Some(b3) = bounds.a3_loc {
                update(2, delta_norm(&cur.b, alpha)?, b3);
            }
            let d = principal_angle_distance(&cur.b, &gt.b_star)?;
            update(3, d, bounds.a4_loc_factor * dist_t);
        }
    }
    let applicable = [bounds.a1_loc.is_some(), true, bounds.a3_loc.is_some(), true];
    let flag = |j: usize| {
        if !applicable[j] {
            Check::NotApplicable
        } else if pass[j] {
            Check::Pass
        } else {
            Check::Fail
        }
    };
    let mut worst_excess = worst;
    for j in 0..4 {
        if !applicable[j] || worst_excess[j] == f64::NEG_INFINITY {
            worst_excess[j] = f64::NAN;
        }
    }
    Ok(LocalReport {
        worst_excess,
        flags: LocalFlags {
            a1: flag(0),
            a2: flag(1),
            a3: flag(2),
            a4: flag(3),
        },
    })
}

/// Spectral norm of the averaged prior weight (1/m)Σ_i Π_s (I − α w_s w_sᵀ)
/// and its first-order prediction 1 − α σ_min²(B_*ᵀB_t) μ̂², where μ̂² is the
/// smallest eigenvalue of (1/m)Σ_i w_{*,i}w_{*,i}ᵀ/‖w_{*,i}‖².
pub fn prior_weight_diagnostics(
    trajectories: &[LocalTrajectory],
    b_t: &Matrix,
    b_star: &Matrix,
    alpha: f64,
    heads: &[Vector],
) -> Result<(f64, f64)> {
    let k = b_t.cols();
    let m = trajectories.len() as f64;
    let mut avg = Matrix::zeros(k, k);
    let mut normalized = Matrix::zeros(k, k);
    let mut degenerate = None;
    for tr in trajectories {
        let mut prod = Matrix::identity(k);
        for st in &tr.states[..tr.states.len() - 1] {
            let mut factor = Matrix::identity(k);
            factor.rank1_update(-alpha, &st.w, &st.w);
            prod = prod.matmul(&factor);
        }
        avg.axpy(1.0 / m, &prod);
        let h = &heads[tr.client];
        let n2 = h.dot(h);
        if n2 == 0.0 {
            degenerate.get_or_insert(tr.client);
        } else {
            normalized.rank1_update(1.0 / (m * n2), h, h);
        }
    }
    if let Some(i) = degenerate {
        return Err(Error::DegenerateHead(i));
    }
    normalized.symmetrize();
    let measured = spectral_norm(&avg)?;
    let mu_hat_sq = min_eig_psd(&normalized)?;
    let s = min_singular_value(&b_star.tmatmul(b_t))?;
    Ok((measured, 1.0 - alpha * s * s * mu_hat_sq))
}

/// Stateful observer the engine calls once per round.
#[derive(Clone, Debug)]
pub struct Monitor {
    pub stats: DiversityStats,
    pub bounds: Bounds,
    pub dist0: f64,
    pub e0: f64,
    alpha: f64,
    hypotheses: bool,
    population: bool,
    gt: GroundTruth,
    w_bar_target: Vector,
    prev_perp: f64,
    prev_dist: f64,
}

impl Monitor {
    pub fn new(gt: &GroundTruth, init: &ModelState, config: &SimConfig) -> Result<Monitor> {
        let stats = diversity_stats(&gt.heads);
        let dist0 = principal_angle_distance(&init.b, &gt.b_star)?;
        let e0 = 1.0 - dist0 * dist0;
        let bounds = Bounds::new(&stats, config.alpha, config.tau, e0, &config.constants);
        Ok(Monitor {
            w_bar_target: gt.b_star.matvec(&stats.w_bar),
            stats,
            bounds,
            dist0,
            e0,
            alpha: config.alpha,
            hypotheses: config.monitor,
            population: config.regime == Regime::Population,
            gt: gt.clone(),
            prev_perp: perp_norm(&gt.b_star, &init.b)?,
            prev_dist: dist0,
        })
    }

    /// Metrics for θ_t produced by the given round. `clients` and
    /// `trajectories` describe the round that produced it.
    pub fn observe(
        &mut self,
        t: usize,
        state: &ModelState,
        clients: &[usize],
        trajectories: &[LocalTrajectory],
    ) -> Result<RoundMetrics> {
        let gt = &self.gt;
        let alpha = self.alpha;
        let dist = principal_angle_distance(&state.b, &gt.b_star)?;
        let delta_norm = delta_norm(&state.b, alpha)?;
        let grad = grad_norm_toward(state, &self.w_bar_target);
        let perp = perp_norm(&gt.b_star, &state.b)?;

        let sampled: Vec<Vector> = clients.iter().map(|&i| gt.heads[i].clone()).collect();
        let w_bar_t = gt.b_star.matvec(&Vector::mean(&sampled));
        // w_t − α(I + Δ_t)B_tᵀ B_* w̄ = w_t − α(2I − αB_tᵀB_t)B_tᵀ B_* w̄
        let v = state.b.tmatvec(&w_bar_t);
        let bv = state.b.matvec(&v);
        let corrected = v.scale(2.0).sub(&state.b.tmatvec(&bv).scale(alpha)).scale(alpha);
        let a1_residual = state.w.sub(&corrected).norm();

        let mut m = RoundMetrics {
            t,
            dist,
            delta_norm,
            w_norm: state.w.norm(),
            grad_norm_global: grad,
            a1_residual,
            perp_norm: perp,
            perp_norm_prev: self.prev_perp,
            e0: self.e0,
            global_flags: None,
            local: None,
            prior_weight_measured: None,
            prior_weight_predicted: None,
        };
        if self.hypotheses {
            m.global_flags = Some(global_checks(&m, &self.bounds));
            m.local = Some(check_local_hypotheses(
                trajectories,
                gt,
                self.prev_dist,
                alpha,
                &self.bounds,
            )?);
            if self.population {
                let b_prev = &trajectories[0].states[0].b;
                if let Ok((meas, pred)) =
                    prior_weight_diagnostics(trajectories, b_prev, &gt.b_star, alpha, &gt.heads)
                {
                    m.prior_weight_measured = Some(meas);
                    m.prior_weight_predicted = Some(pred);
                }
            }
        }
        self.prev_perp = perp;
        self.prev_dist = dist;
        Ok(m)
    }
}
