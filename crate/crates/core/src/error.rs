use thiserror::Error;

/// Errors raised by the solver pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value returned by {callback} at stage {stage}")]
    Evaluation {
        callback: &'static str,
        stage: usize,
    },

    #[error("{what} factorization failed at stage {stage}")]
    Factorization { what: &'static str, stage: usize },

    #[error("eigendecomposition failed for {n}x{n} matrix (max |entry| = {max_abs:e})")]
    Eigen { n: usize, max_abs: f64 },

    #[error("PCG breakdown at iteration {iteration}: p'Sp = {curvature:e}")]
    PcgBreakdown { iteration: usize, curvature: f64 },

    #[error("SQP diverged at iteration {iteration}")]
    Divergence {
        iteration: usize,
        /// Last finite iterate, flattened.
        last_finite: Vec<f64>,
    },

    #[error("rollout truncated at step {step}: {source}")]
    Rollout {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("unsupported problem form: {0}")]
    Unsupported(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid problem file: {0}")]
    Format(String),

    #[error("contract violation: {0}")]
    Contract(&'static str),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected,
            got,
        })
    }
}
