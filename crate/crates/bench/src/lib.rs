//! Benchmarks for the differentiable MPC solver: seeded problem generators,
//! imitation- and reinforcement-learning loops, timing and the warm-start
//! study. Results are written as one JSON metadata file plus CSV series.

pub mod generators;
pub mod output;
pub mod study;
pub mod timing;
pub mod training;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("problem generation failed: {0}")]
    Generation(String),
    #[error("training stopped: {0}")]
    Training(String),
    #[error(transparent)]
    Solver(#[from] dmpc_core::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl BenchError {
    /// 2 for solver failures, 3 for invalid input, 1 for anything else.
    pub fn exit_code(&self) -> i32 {
        use dmpc_core::Error as E;
        match self {
            BenchError::Invalid(_) | BenchError::Json(_) => 3,
            BenchError::Solver(
                E::Format(_) | E::InvalidParameter(_) | E::Dimension { .. } | E::Unsupported(_),
            ) => 3,
            BenchError::Solver(_) | BenchError::Generation(_) | BenchError::Training(_) => 2,
            BenchError::Io(_) | BenchError::Csv(_) => 1,
        }
    }
}
