use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use fedrep::concentration::{
    averaged_gram_deviation_experiment, gram_deviation_experiment, head_sampling_event_rate, head_sampling_threshold,
    DeviationCurve,
};
use fedrep::engine::{build_instance, run_training, run_training_from};
use fedrep::finetune::{finetune, new_client_head, FineTuneParams};
use fedrep::linalg::principal_angle_distance;
use fedrep::lowerbound::{construct_adversarial, make_b0_containing_product, paired_dgd_experiment};
use fedrep::monitors::{GlobalFlags, LocalFlags};
use fedrep::problem::{diversity_stats, gen_ground_truth};
use fedrep::{Check, Error, RoundMetrics, SimConfig};
use serde_json::{json, Value};
use thiserror::Error;

use crate::config::{ExperimentConfig, Kind};

pub const TRAIN_COLUMNS: [&str; 16] = [
    "t",
    "dist",
    "delta_norm",
    "w_norm",
    "grad_norm_global",
    "A1",
    "A2",
    "A3",
    "A4",
    "A5",
    "A1_loc",
    "A2_loc",
    "A3_loc",
    "A4_loc",
    "prior_weight_measured",
    "prior_weight_predicted",
];

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("training diverged at round {round}")]
    Diverged { round: usize },
    #[error(transparent)]
    Sim(Error),
}

impl RunError {
    /// 2 for divergence, 1 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            RunError::Diverged { .. } => 2,
            _ => 1,
        }
    }
}

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        match e {
            Error::Diverged { round, .. } => RunError::Diverged { round },
            Error::TargetInfeasible(_) | Error::DimensionError(_) | Error::InvalidSampleSize { .. } => {
                RunError::Config(e.to_string())
            }
            other => RunError::Sim(other),
        }
    }
}

type Result<T> = std::result::Result<T, RunError>;

/// Seventeen significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_else(|| "NA".into())
}

struct Csv {
    path: PathBuf,
    out: BufWriter<fs::File>,
}

impl Csv {
    fn create(path: PathBuf, header: &[&str]) -> Result<Csv> {
        let file = fs::File::create(&path).map_err(|source| RunError::Io {
            path: path.clone(),
            source,
        })?;
        let mut csv = Csv {
            path,
            out: BufWriter::new(file),
        };
        csv.row(header.iter().map(|s| s.to_string()))?;
        Ok(csv)
    }

    fn row(&mut self, fields: impl IntoIterator<Item = String>) -> Result<()> {
        let line = fields.into_iter().collect::<Vec<_>>().join(",");
        writeln!(self.out, "{line}").map_err(|source| RunError::Io {
            path: self.path.clone(),
            source,
        })
    }

    fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|source| RunError::Io {
            path: self.path.clone(),
            source,
        })
    }
}

fn write_json(path: PathBuf, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("json values serialize");
    text.push('\n');
    fs::write(&path, text).map_err(|source| RunError::Io { path, source })
}

fn metrics_row(m: &RoundMetrics) -> Vec<String> {
    let na = Check::NotApplicable;
    let g = m.global_flags.unwrap_or(GlobalFlags {
        a1: na,
        a2: na,
        a3: na,
        a4: na,
        a5: na,
    });
    let l = m.local.map(|r| r.flags).unwrap_or(LocalFlags {
        a1: na,
        a2: na,
        a3: na,
        a4: na,
    });
    let mut row = vec![
        m.t.to_string(),
        fmt_f64(m.dist),
        fmt_f64(m.delta_norm),
        fmt_f64(m.w_norm),
        fmt_f64(m.grad_norm_global),
    ];
    row.extend(g.all().iter().chain(l.all().iter()).map(|c| c.as_str().to_string()));
    row.push(fmt_opt(m.prior_weight_measured));
    row.push(fmt_opt(m.prior_weight_predicted));
    row
}

/// Overall verdict across rounds: true, false, or null when not monitored.
fn hypotheses_verdict(metrics: &[RoundMetrics]) -> Value {
    let mut verdict = Check::Pass;
    for m in metrics {
        match (m.global_flags, m.local) {
            (Some(g), Some(l)) => {
                for c in g.all().iter().chain(l.flags.all().iter()) {
                    verdict = verdict.and(*c);
                }
            }
            _ => return Value::Null,
        }
    }
    if metrics.is_empty() {
        return Value::Null;
    }
    serde_json::to_value(verdict).expect("check serializes")
}

/// Run the experiment and write `<kind>.csv` and `summary.json` into
/// `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, kind: Kind, out_dir: &Path) -> Result<()> {
    if let Some(k) = cfg.kind {
        if k != kind {
            return Err(RunError::Config(format!(
                "config declares kind `{}` but `{}` was requested",
                k.name(),
                kind.name()
            )));
        }
    }
    fs::create_dir_all(out_dir).map_err(|source| RunError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let csv_path = out_dir.join(format!("{}.csv", kind.name()));
    let json_path = out_dir.join("summary.json");
    let mut resolved = cfg.clone();
    resolved.kind = Some(kind);
    resolved.out_dir = out_dir.to_path_buf();
    let header = json!({ "kind": kind.name(), "config": resolved });
    match kind {
        Kind::Train => train(&resolved, csv_path, json_path, header),
        Kind::Finetune => finetune_sweep(&resolved, csv_path, json_path, header),
        Kind::Lowerbound => lowerbound(&resolved, csv_path, json_path, header),
        Kind::Concentration => concentration(&resolved, csv_path, json_path, header),
        Kind::Sweep => sweep(&resolved, csv_path, json_path, header),
    }
}

fn merge(mut base: Value, extra: Value) -> Value {
    if let (Value::Object(b), Value::Object(e)) = (&mut base, extra) {
        b.extend(e);
    }
    base
}

fn train(cfg: &ExperimentConfig, csv_path: PathBuf, json_path: PathBuf, header: Value) -> Result<()> {
    let (gt, init) = build_instance(&cfg.sim)?;
    let dist0 = principal_angle_distance(&init.b, &gt.b_star)?;
    let stats = diversity_stats(&gt.heads);
    let (metrics, diverged_at) = match run_training_from(&gt, &init, &cfg.sim) {
        Ok((_, m)) => (m, None),
        Err(Error::Diverged { round, partial }) => (*partial, Some(round)),
        Err(e) => return Err(e.into()),
    };
    let mut csv = Csv::create(csv_path, &TRAIN_COLUMNS)?;
    for m in &metrics {
        csv.row(metrics_row(m))?;
    }
    csv.finish()?;
    let last = metrics.last();
    let summary = merge(
        header,
        json!({
            "rounds_completed": metrics.len(),
            "diverged_at": diverged_at,
            "dist0": dist0,
            "diversity": stats,
            "final_dist": last.map(|m| m.dist),
            "final_grad_norm_global": last.map(|m| m.grad_norm_global),
            "hypotheses_held": hypotheses_verdict(&metrics),
        }),
    );
    write_json(json_path, &summary)?;
    match diverged_at {
        Some(round) => Err(RunError::Diverged { round }),
        None => Ok(()),
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn finetune_sweep(cfg: &ExperimentConfig, csv_path: PathBuf, json_path: PathBuf, header: Value) -> Result<()> {
    let ft = &cfg.finetune;
    let mut csv = Csv::create(csv_path, &["method", "trial", "n", "step", "error"])?;
    // finals[method][n index] over trials
    let mut finals = vec![vec![Vec::new(); ft.n_values.len()]; 2];
    for trial in 0..ft.trials {
        let sim = SimConfig {
            seed: cfg.sim.seed.wrapping_add(trial as u64),
            monitor: false,
            ..cfg.sim.clone()
        };
        let (gt, _) = build_instance(&sim)?;
        let head = new_client_head(sim.k, sim.seed);
        let pretrained = [
            ("fedavg", run_training(&sim)?.0),
            ("dgd", run_training(&sim.as_dgd())?.0),
        ];
        for (mi, (method, state)) in pretrained.iter().enumerate() {
            for (ni, &n) in ft.n_values.iter().enumerate() {
                let params = FineTuneParams {
                    tau_prime: ft.tau_prime,
                    alpha_ft: ft.alpha_ft,
                    n,
                    noise_sigma: ft.noise_sigma,
                    seed: sim.seed,
                };
                let trace = finetune(state, &gt.b_star, &head, &params);
                for (step, e) in trace.errors.iter().enumerate() {
                    csv.row([method.to_string(), trial.to_string(), n.to_string(), step.to_string(), fmt_f64(*e)])?;
                }
                finals[mi][ni].push(trace.final_error());
            }
        }
    }
    csv.finish()?;
    let per_n: Vec<Value> = ft
        .n_values
        .iter()
        .enumerate()
        .map(|(ni, &n)| {
            let (fm, fs) = mean_std(&finals[0][ni]);
            let (dm, ds) = mean_std(&finals[1][ni]);
            json!({
                "n": n,
                "fedavg_mean": fm,
                "fedavg_std": fs,
                "dgd_mean": dm,
                "dgd_std": ds,
            })
        })
        .collect();
    write_json(json_path, &merge(header, json!({ "final_error": per_n })))
}

fn lowerbound(cfg: &ExperimentConfig, csv_path: PathBuf, json_path: PathBuf, header: Value) -> Result<()> {
    let sim = &cfg.sim;
    let gt = gen_ground_truth(sim.d, sim.k, sim.num_clients, 0.0, sim.seed)?;
    let mut csv = Csv::create(
        csv_path,
        &[
            "delta0",
            "orthonormality_b_star",
            "orthonormality_b_star_prime",
            "product_gap",
            "dist_b0_b_star",
            "dist_b0_b_star_prime",
            "separation",
            "separation_bound",
            "separation_bound_alt",
            "invariants_hold",
            "trajectories_identical",
            "dist_b_star",
            "dist_b_star_prime",
            "max_dist",
            "engine_max_relative_gap",
            "triangle_min_slack",
        ],
    )?;
    let mut cases = Vec::new();
    for &delta in &cfg.lowerbound_delta0 {
        let b0 = make_b0_containing_product(&gt.b_star, &gt.heads, delta, sim.seed)?;
        let pair = construct_adversarial(&b0, &gt.b_star, &gt.heads)?;
        let r = pair.residuals()?;
        let holds = r.holds(delta);
        let rep = paired_dgd_experiment(&pair, &gt.heads, sim.alpha, sim.rounds)?;
        csv.row([
            fmt_f64(delta),
            fmt_f64(r.orthonormality_b_star),
            fmt_f64(r.orthonormality_b_star_prime),
            fmt_f64(r.product_gap),
            fmt_f64(r.dist_b0_b_star),
            fmt_f64(r.dist_b0_b_star_prime),
            fmt_f64(r.separation),
            fmt_f64(r.separation_bound),
            fmt_f64(r.separation_bound_alt),
            u8::from(holds).to_string(),
            u8::from(rep.trajectories_identical).to_string(),
            fmt_f64(rep.dist_b_star),
            fmt_f64(rep.dist_b_star_prime),
            fmt_f64(rep.max_dist),
            fmt_f64(rep.engine_max_relative_gap),
            fmt_f64(rep.triangle_min_slack),
        ])?;
        cases.push(json!({
            "delta0": delta,
            "residuals": r,
            "invariants_hold": holds,
            "report": rep,
        }));
    }
    csv.finish()?;
    write_json(json_path, &merge(header, json!({ "cases": cases })))
}

fn curve_rows(csv: &mut Csv, name: &str, c: &DeviationCurve) -> Result<()> {
    for i in 0..c.sample_sizes.len() {
        csv.row([
            name.to_string(),
            c.sample_sizes[i].to_string(),
            fmt_f64(c.mean_deviation[i]),
            fmt_f64(c.quantile95[i]),
        ])?;
    }
    Ok(())
}

fn concentration(cfg: &ExperimentConfig, csv_path: PathBuf, json_path: PathBuf, header: Value) -> Result<()> {
    let c = &cfg.concentration;
    let seed = cfg.sim.seed;
    let single = gram_deviation_experiment(c.d, c.d1, c.d2, &c.b_values, c.trials, seed);
    let averaged = averaged_gram_deviation_experiment(c.d, c.d1, c.d2, &c.m_values, c.b, c.trials, seed);
    let mut csv = Csv::create(csv_path, &["experiment", "size", "mean_deviation", "quantile95"])?;
    curve_rows(&mut csv, "single", &single)?;
    curve_rows(&mut csv, "averaged", &averaged)?;
    csv.finish()?;

    let gt = gen_ground_truth(cfg.sim.d, cfg.sim.k, cfg.sim.num_clients, 0.0, seed)?;
    let m = head_sampling_threshold(&gt.heads, c.head_alpha, c.head_rounds);
    let rate = head_sampling_event_rate(&gt.heads, m, c.head_alpha, c.head_rounds, c.head_trials, seed);
    let slope = |x: f64| if x.is_nan() { Value::Null } else { json!(x) };
    write_json(
        json_path,
        &merge(
            header,
            json!({
                "single_slope": slope(single.fitted_slope),
                "averaged_slope": slope(averaged.fitted_slope),
                "head_sampling": { "threshold_m": m, "event_rate": rate },
            }),
        ),
    )
}

fn sweep(cfg: &ExperimentConfig, csv_path: PathBuf, json_path: PathBuf, header: Value) -> Result<()> {
    let mut csv = Csv::create(
        csv_path,
        &["tau", "alpha", "status", "rounds_completed", "final_dist", "final_grad_norm_global", "hypotheses_held"],
    )?;
    let mut runs = Vec::new();
    for &tau in &cfg.sweep_tau {
        for &alpha in &cfg.sweep_alpha {
            let sim = SimConfig {
                tau,
                alpha,
                ..cfg.sim.clone()
            };
            let (metrics, status) = match run_training(&sim) {
                Ok((_, m)) => (m, "ok"),
                Err(Error::Diverged { partial, .. }) => (*partial, "diverged"),
                Err(e) => return Err(e.into()),
            };
            let last = metrics.last();
            let verdict = hypotheses_verdict(&metrics);
            let verdict_cell = match &verdict {
                Value::Bool(true) => "1",
                Value::Bool(false) => "0",
                _ => "NA",
            };
            csv.row([
                tau.to_string(),
                fmt_f64(alpha),
                status.to_string(),
                metrics.len().to_string(),
                fmt_opt(last.map(|m| m.dist)),
                fmt_opt(last.map(|m| m.grad_norm_global)),
                verdict_cell.to_string(),
            ])?;
            runs.push(json!({
                "tau": tau,
                "alpha": alpha,
                "status": status,
                "rounds_completed": metrics.len(),
                "final_dist": last.map(|m| m.dist),
                "hypotheses_held": verdict,
            }));
        }
    }
    csv.finish()?;
    write_json(json_path, &merge(header, json!({ "runs": runs })))
}
