//! Flat `key = value` experiment configuration with `#` comments.
//!
//! Unknown and repeated keys are rejected; `M` and `T` stand for
//! `num_clients` and `rounds`. Every key has a default, so an
//! empty file describes the linear-regression recipe (d=100, k=5, M=m=40,
//! τ=2, α=0.4, T=2000, population gradients).

use std::collections::HashSet;
use std::path::PathBuf;
use std::str::FromStr;

use clap::ValueEnum;
use fedrep::{Regime, SimConfig};
use serde::Serialize;
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Train,
    Finetune,
    Lowerbound,
    Concentration,
    Sweep,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Train => "train",
            Kind::Finetune => "finetune",
            Kind::Lowerbound => "lowerbound",
            Kind::Concentration => "concentration",
            Kind::Sweep => "sweep",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FineTuneSettings {
    pub trials: usize,
    pub n_values: Vec<usize>,
    pub tau_prime: usize,
    pub alpha_ft: f64,
    pub noise_sigma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConcentrationSettings {
    pub d: usize,
    pub d1: usize,
    pub d2: usize,
    pub b_values: Vec<usize>,
    pub m_values: Vec<usize>,
    /// Batch size for the averaged experiment.
    pub b: usize,
    pub trials: usize,
    pub head_alpha: f64,
    pub head_rounds: usize,
    pub head_trials: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentConfig {
    pub kind: Option<Kind>,
    pub sim: SimConfig,
    pub out_dir: PathBuf,
    pub finetune: FineTuneSettings,
    pub lowerbound_delta0: Vec<f64>,
    pub concentration: ConcentrationSettings,
    pub sweep_alpha: Vec<f64>,
    pub sweep_tau: Vec<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            kind: None,
            sim: SimConfig {
                monitor: true,
                ..SimConfig::figure_one(0)
            },
            out_dir: PathBuf::from("out"),
            finetune: FineTuneSettings {
                trials: 10,
                n_values: vec![5, 10, 25, 50],
                tau_prime: 200,
                alpha_ft: 0.01,
                noise_sigma: 0.1,
            },
            lowerbound_delta0: vec![0.1, 0.3, 0.5],
            concentration: ConcentrationSettings {
                d: 20,
                d1: 5,
                d2: 5,
                b_values: vec![100, 1000, 10000],
                m_values: vec![1, 10, 100],
                b: 100,
                trials: 30,
                head_alpha: 0.3,
                head_rounds: 100,
                head_trials: 1000,
            },
            sweep_alpha: vec![0.1, 0.2, 0.4],
            sweep_tau: vec![1, 2, 5],
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ParseError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key `{key}` given more than once")]
    Duplicate { line: usize, key: String },
    #[error("line {line}: bad value `{value}` for `{key}`: {reason}")]
    BadValue {
        line: usize,
        key: String,
        value: String,
        reason: String,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

struct Entry<'a> {
    line: usize,
    key: &'a str,
    value: &'a str,
}

impl Entry<'_> {
    fn bad(&self, reason: impl Into<String>) -> ParseError {
        ParseError::BadValue {
            line: self.line,
            key: self.key.to_string(),
            value: self.value.to_string(),
            reason: reason.into(),
        }
    }

    fn parse<T: FromStr>(&self) -> Result<T, ParseError>
    where
        T::Err: std::fmt::Display,
    {
        self.value.parse().map_err(|e: T::Err| self.bad(e.to_string()))
    }

    fn list<T: FromStr>(&self) -> Result<Vec<T>, ParseError>
    where
        T::Err: std::fmt::Display,
    {
        let items = self
            .value
            .split(',')
            .map(|s| s.trim().parse().map_err(|e: T::Err| self.bad(e.to_string())))
            .collect::<Result<Vec<T>, _>>()?;
        if items.is_empty() {
            return Err(self.bad("empty list"));
        }
        Ok(items)
    }

    fn flag(&self) -> Result<bool, ParseError> {
        match self.value {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            _ => Err(self.bad("expected true or false")),
        }
    }
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, ParseError> {
    let mut cfg = ExperimentConfig::default();
    let mut seen = HashSet::new();
    let mut batch_size = None;
    let mut finite = false;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (key, value) = body.split_once('=').ok_or_else(|| ParseError::Syntax {
            line,
            text: body.to_string(),
        })?;
        let key = match key.trim() {
            "M" => "num_clients",
            "T" => "rounds",
            other => other,
        };
        let e = Entry {
            line,
            key,
            value: value.trim(),
        };
        if !seen.insert(e.key.to_string()) {
            return Err(ParseError::Duplicate {
                line,
                key: e.key.to_string(),
            });
        }
        let sim = &mut cfg.sim;
        let ft = &mut cfg.finetune;
        let conc = &mut cfg.concentration;
        match e.key {
            "kind" => {
                cfg.kind = Some(Kind::from_str(e.value, true).map_err(|r| e.bad(r))?);
            }
            "d" => sim.d = e.parse()?,
            "k" => sim.k = e.parse()?,
            "num_clients" => sim.num_clients = e.parse()?,
            "m" => sim.m = e.parse()?,
            "tau" => sim.tau = e.parse()?,
            "alpha" => sim.alpha = e.parse()?,
            "rounds" => sim.rounds = e.parse()?,
            "regime" => {
                finite = match e.value {
                    "population" => false,
                    "finite" | "finite_sample" => true,
                    _ => return Err(e.bad("expected population or finite")),
                }
            }
            "batch_size" => batch_size = Some(e.parse()?),
            "noise_sigma" => sim.noise_sigma = e.parse()?,
            "seed" => sim.seed = e.parse()?,
            "delta0" => {
                sim.delta0_target = match e.value {
                    "none" => None,
                    _ => Some(e.parse()?),
                }
            }
            "monitor" => sim.monitor = e.flag()?,
            "c3" => sim.constants.c3 = e.parse()?,
            "rate_const" => sim.constants.rate_const = e.parse()?,
            "out" => cfg.out_dir = PathBuf::from(e.value),
            "trials" => ft.trials = e.parse()?,
            "n_values" => ft.n_values = e.list()?,
            "tau_prime" => ft.tau_prime = e.parse()?,
            "alpha_ft" => ft.alpha_ft = e.parse()?,
            "ft_noise_sigma" => ft.noise_sigma = e.parse()?,
            "lowerbound_delta0" => cfg.lowerbound_delta0 = e.list()?,
            "conc_d" => conc.d = e.parse()?,
            "conc_d1" => conc.d1 = e.parse()?,
            "conc_d2" => conc.d2 = e.parse()?,
            "conc_b_values" => conc.b_values = e.list()?,
            "conc_m_values" => conc.m_values = e.list()?,
            "conc_b" => conc.b = e.parse()?,
            "conc_trials" => conc.trials = e.parse()?,
            "head_alpha" => conc.head_alpha = e.parse()?,
            "head_rounds" => conc.head_rounds = e.parse()?,
            "head_trials" => conc.head_trials = e.parse()?,
            "sweep_alpha" => cfg.sweep_alpha = e.list()?,
            "sweep_tau" => cfg.sweep_tau = e.list()?,
            _ => {
                return Err(ParseError::UnknownKey {
                    line,
                    key: e.key.to_string(),
                })
            }
        }
    }
    cfg.sim.regime = match (finite, batch_size) {
        (true, b) => Regime::FiniteSample {
            batch_size: b.unwrap_or(100),
        },
        (false, None) => Regime::Population,
        (false, Some(_)) => {
            return Err(ParseError::Invalid("batch_size requires regime = finite".into()));
        }
    };
    validate(&cfg)?;
    Ok(cfg)
}

fn validate(cfg: &ExperimentConfig) -> Result<(), ParseError> {
    cfg.sim.validate().map_err(|e| ParseError::Invalid(e.to_string()))?;
    let invalid = |msg: &str| Err(ParseError::Invalid(msg.to_string()));
    if cfg.finetune.trials == 0 || cfg.finetune.tau_prime == 0 || cfg.finetune.n_values.contains(&0) {
        return invalid("fine-tuning needs trials, tau_prime and every n at least 1");
    }
    if cfg.lowerbound_delta0.iter().any(|d| !(*d > 0.0 && *d <= 0.5)) {
        return invalid("lowerbound_delta0 values must lie in (0, 0.5]");
    }
    let c = &cfg.concentration;
    if c.d == 0 || c.d1 == 0 || c.d2 == 0 || c.b == 0 || c.trials == 0 || c.head_rounds == 0 || c.head_trials == 0 {
        return invalid("concentration sizes must be at least 1");
    }
    if c.b_values.contains(&0) || c.m_values.contains(&0) {
        return invalid("conc_b_values and conc_m_values must be at least 1");
    }
    if cfg.sweep_alpha.iter().any(|a| !(*a > 0.0)) || cfg.sweep_tau.contains(&0) {
        return invalid("sweep values must be positive");
    }
    Ok(())
}
