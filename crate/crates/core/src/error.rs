use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no exponential dichotomy: eigenvalue with real part {re:.3e} is within {tol:.1e} of the imaginary axis")]
    NoDichotomy { re: f64, tol: f64 },

    #[error("state diverged at step {step} (norm {norm:.3e} exceeds {bound:.1e})")]
    Diverged { step: usize, norm: f64, bound: f64 },

    #[error("fundamental matrix overflow at step {step}; shorten the re-orthonormalization interval")]
    Overflow { step: usize },

    #[error("numerical breakdown at step {step}: {reason}; try a smaller dt")]
    NumericalBreakdown { step: usize, reason: String },

    #[error("Riccati solve did not converge within {horizon} time units (trailing |dP/dt| = {trailing:.3e})")]
    NotConverged { horizon: f64, trailing: f64 },

    #[error("particle filter degenerated at step {step} (ESS {ess:.2}); increase N or decrease dt")]
    Degeneracy { step: usize, ess: f64 },

    #[error("assumption violated: {0}")]
    AssumptionViolated(String),

    #[error("power constraint violated at {} time(s), first at t = {first_time:.4}", .times.len())]
    PowerConstraintViolated { first_time: f64, times: Vec<f64> },

    #[error("Monte Carlo run failed: {failed} of {total} paths failed ({first})")]
    TooManyFailures {
        failed: usize,
        total: usize,
        first: String,
    },

    #[error("inconsistent Duncan forms: {0}")]
    Inconsistent(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
