//! Deterministic simulator for FedAvg and distributed gradient descent on
//! multi-task linear representation learning.
//!
//! The crate is organised bottom-up: [`linalg`] holds the dense kernel,
//! [`problem`] builds planted instances, [`engine`] runs rounds, [`monitors`]
//! observes them, and [`lowerbound`] / [`concentration`] host the two
//! standalone experiments.

pub mod concentration;
pub mod engine;
pub mod error;
pub mod finetune;
pub mod linalg;
pub mod lowerbound;
pub mod monitors;
pub mod problem;
pub mod rng;

pub use engine::{ModelState, Regime, SimConfig};
pub use error::{Error, Result};
pub use linalg::{Matrix, Vector};
pub use monitors::{Check, MonitorConstants, RoundMetrics};
pub use problem::{DiversityStats, GroundTruth};
