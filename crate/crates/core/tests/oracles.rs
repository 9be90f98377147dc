mod common;

use fedrep::engine::{build_instance, global_round, local_step_finite, local_step_population, run_training};
use fedrep::linalg::{Matrix, Vector};
use fedrep::lowerbound::dgd_closed_form;
use fedrep::monitors::global_grad_norm;
use fedrep::problem::{gen_ground_truth, sample_batch, Batch, GroundTruth};
use fedrep::rng::Stream;
use fedrep::{ModelState, SimConfig};

use common::{central_diff, fd_instance as random_instance, gaussian_matrix, gaussian_vector, implied_gradient, max_gap, pack, unpack};

const FD_STEP: f64 = 1e-5;

#[test]
fn population_gradient_matches_finite_differences() {
    for i in 0..20 {
        let (gt, st) = random_instance(i);
        let (d, k) = (gt.d(), gt.k());
        let target = gt.b_star.matvec(&gt.heads[1]);
        let loss = |x: &[f64]| {
            let (b, w) = unpack(x, d, k);
            let r = b.matvec(&w).sub(&target);
            0.5 * r.dot(&r)
        };
        let fd = central_diff(loss, &pack(&st), FD_STEP);
        let next = local_step_population(&st, &gt.b_star, &gt.heads[1], 1.0);
        let gap = max_gap(&implied_gradient(&st, &next), &fd);
        assert!(gap < 1e-6, "instance {i} (d={d}, k={k}): {gap:e}");
    }
}

#[test]
fn finite_sample_gradient_matches_finite_differences() {
    for i in 0..20 {
        let (gt, st) = random_instance(i);
        let (d, k) = (gt.d(), gt.k());
        let batch = sample_batch(&gt, 2, 7, &mut Stream::new(i, "fd-batch", &[]));
        let loss = |x: &[f64]| {
            let (b, w) = unpack(x, d, k);
            let r = batch.x.matvec(&b.matvec(&w)).sub(&batch.y);
            r.dot(&r) / (2.0 * batch.x.rows() as f64)
        };
        let fd = central_diff(loss, &pack(&st), FD_STEP);
        let next = local_step_finite(&st, &batch, 1.0);
        let gap = max_gap(&implied_gradient(&st, &next), &fd);
        assert!(gap < 1e-6, "instance {i} (d={d}, k={k}): {gap:e}");
    }
}

#[test]
fn hand_instance_finite_differences() {
    // d = 3, k = 2 with B_* the first two coordinate axes.
    let gt = GroundTruth {
        b_star: Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0], &[0.0, 0.0]]),
        heads: vec![Vector::from_vec(vec![1.0, -2.0])],
        noise_sigma: 0.0,
    };
    let st = ModelState {
        b: Matrix::from_rows(&[&[0.5, 0.1], &[-0.3, 0.8], &[0.2, 0.4]]),
        w: Vector::from_vec(vec![0.7, -0.6]),
    };
    let target = gt.b_star.matvec(&gt.heads[0]);
    let loss = |x: &[f64]| {
        let (b, w) = unpack(x, 3, 2);
        let r = b.matvec(&w).sub(&target);
        0.5 * r.dot(&r)
    };
    let fd = central_diff(loss, &pack(&st), FD_STEP);
    let next = local_step_population(&st, &gt.b_star, &gt.heads[0], 1.0);
    assert!(max_gap(&implied_gradient(&st, &next), &fd) < 1e-6);
}

#[test]
fn global_gradient_norm_matches_finite_differences() {
    for i in 0..20 {
        let (gt, st) = random_instance(i);
        let (d, k) = (gt.d(), gt.k());
        let targets: Vec<Vector> = gt.heads.iter().map(|h| gt.b_star.matvec(h)).collect();
        let loss = |x: &[f64]| {
            let (b, w) = unpack(x, d, k);
            let bw = b.matvec(&w);
            targets.iter().map(|t| 0.5 * bw.sub(t).dot(&bw.sub(t))).sum::<f64>() / targets.len() as f64
        };
        let fd = central_diff(loss, &pack(&st), FD_STEP);
        let norm = fd.iter().map(|g| g * g).sum::<f64>().sqrt();
        assert!((global_grad_norm(&st, &gt) - norm).abs() < 1e-6, "instance {i}");
    }
}

fn dgd_small(seed: u64) -> SimConfig {
    SimConfig {
        d: 20,
        k: 3,
        num_clients: 10,
        m: 10,
        tau: 1,
        alpha: 0.2,
        rounds: 50,
        ..SimConfig::figure_one(seed)
    }
}

#[test]
fn dgd_engine_matches_closed_form() {
    for seed in 0..3 {
        let cfg = dgd_small(seed);
        let (gt, init) = build_instance(&cfg).unwrap();
        let p = gt.b_star.matvec(&gt.mean_head());
        let closed = dgd_closed_form(&init, &p, cfg.alpha, cfg.rounds);
        let mut st = init.clone();
        for (t, expect) in closed.iter().enumerate().skip(1) {
            st = global_round(&st, &gt, t - 1, &cfg, None).unwrap().0;
            let scale = expect.max_abs().max(1.0);
            assert!(st.b.sub(&expect.b).max_abs() <= 1e-12 * scale, "seed {seed} round {t}");
            assert!(st.w.sub(&expect.w).max_abs() <= 1e-12 * scale, "seed {seed} round {t}");
        }
    }
}

#[test]
fn dgd_representation_update_is_exact() {
    let cfg = dgd_small(4);
    let (gt, init) = build_instance(&cfg).unwrap();
    let st = local_step_population(&init, &gt.b_star, &gt.heads[0], 0.3);
    let next = global_round(&st, &gt, 0, &cfg, None).unwrap().0;
    let r = st.b.matvec(&st.w).sub(&gt.b_star.matvec(&gt.mean_head()));
    let mut expect = st.b.clone();
    expect.rank1_update(-cfg.alpha, &r, &st.w);
    assert!(next.b.sub(&expect).max_abs() < 1e-12);
}

#[test]
fn finite_sample_step_approaches_population_step() {
    let gt = gen_ground_truth(8, 2, 2, 0.0, 3).unwrap();
    let st = ModelState {
        b: gaussian_matrix(8, 2, 3, "cons-b"),
        w: gaussian_vector(2, 3, "cons-w"),
    };
    let pop = local_step_population(&st, &gt.b_star, &gt.heads[0], 0.1);
    let sizes = [100usize, 1_000, 10_000, 100_000];
    let trials = 30;
    let means: Vec<f64> = sizes
        .iter()
        .map(|&b| {
            (0..trials)
                .map(|tr| {
                    let batch: Batch = sample_batch(&gt, 0, b, &mut Stream::new(3, "cons", &[b as u64, tr]));
                    let f = local_step_finite(&st, &batch, 0.1);
                    let db = f.b.sub(&pop.b).frobenius_norm();
                    let dw = f.w.sub(&pop.w).norm();
                    (db * db + dw * dw).sqrt()
                })
                .sum::<f64>()
                / trials as f64
        })
        .collect();
    let lx: Vec<f64> = sizes.iter().map(|b| (*b as f64).ln()).collect();
    let ly: Vec<f64> = means.iter().map(|m| m.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let slope = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / lx.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    assert!((-0.6..=-0.4).contains(&slope), "slope {slope}, means {means:?}");
}

#[test]
fn zero_rounds_return_initialisation() {
    let cfg = SimConfig { rounds: 0, ..dgd_small(1) };
    let (_, init) = build_instance(&cfg).unwrap();
    let (fin, metrics) = run_training(&cfg).unwrap();
    assert_eq!(fin, init);
    assert!(metrics.is_empty());
}

#[test]
fn five_local_steps_keep_heads_bounded_at_theorem_scale() {
    let cfg = common::theorem_config(30, 3, 20, 5, 0.5, 20, 6);
    let (_, metrics) = run_training(&cfg).unwrap();
    for m in &metrics {
        let local = m.local.expect("monitor on");
        assert!(local.flags.a2.is_pass(), "round {}: {:?}", m.t, local);
        assert!(local.worst_excess[1] <= 0.0);
    }
}
