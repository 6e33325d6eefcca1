use thiserror::Error;

use crate::bridge::DiscretizedPath;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a documented precondition on its domain.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A derivative evaluator returned a non-finite value.
    #[error("non-finite {term} at t={t}, z={z:?}")]
    Evaluation { term: &'static str, t: f64, z: Vec<f64> },

    /// A hypothesis gate (convexity, ordering, bounded gradient) refused to run.
    #[error("precondition failed: {0}")]
    Precondition(String),

    /// Iterative solver stopped without meeting its tolerance.
    #[error("solver did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    /// Linear system could not be factorized.
    #[error("singular system: {0}")]
    Singular(String),

    /// Constraint set of an optimization problem is empty.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// Feynman–Kac drift evaluation lost every inner sample; carries the path so far.
    #[error("Feynman-Kac drift failed at step {step}: {reason}")]
    DriftExhausted { step: usize, reason: String, partial: Box<DiscretizedPath> },

    /// Every Monte Carlo sample of an estimator was rejected as non-finite.
    #[error("all {budget} inner samples rejected (non-finite integrand)")]
    Rejected { budget: usize },

    /// Monte Carlo tasks failed; indices are the failing task numbers.
    #[error("{} task(s) failed, first at index {}: {first}", failed.len(), failed.first().copied().unwrap_or(0))]
    Tasks { failed: Vec<u64>, first: String },

    /// Operation is not defined for this kind of input.
    #[error("unsupported: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn arg<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Argument(msg.into()))
}
