use thiserror::Error;

use crate::monitors::RoundMetrics;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is rank deficient (column {column} norm {norm:e} below threshold)")]
    RankDeficient { column: usize, norm: f64 },
    #[error("iteration did not converge after {iterations} steps")]
    NoConvergence { iterations: usize },
    #[error("dimension error: {0}")]
    DimensionError(String),
    #[error("target distance {0} is outside (0, 1)")]
    TargetInfeasible(f64),
    #[error("cannot sample {m} of {total} clients")]
    InvalidSampleSize { m: usize, total: usize },
    #[error("iterate diverged at round {round} (|entry| > 1e12)")]
    Diverged {
        round: usize,
        partial: Box<Vec<RoundMetrics>>,
    },
    #[error("client {0} has a zero ground-truth head")]
    DegenerateHead(usize),
    #[error("mean head has norm {0:e}, too small")]
    DegenerateMeanHead(f64),
    #[error("rank error: {0}")]
    RankError(String),
    #[error("product direction not contained in col(B0): residual {0:e}")]
    ContainmentViolated(f64),
}

pub type Result<T> = std::result::Result<T, Error>;
