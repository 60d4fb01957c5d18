//! Error taxonomy shared across the crate.

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An exact (unregularized) singular kernel was evaluated at zero separation.
    #[error("singular kernel evaluation at zero separation{}", step_suffix(.step))]
    SingularEvaluation { step: Option<usize> },

    /// A NaN or infinity appeared where a finite value is required.
    #[error("non-finite value in {what} at step {step}")]
    NonFinite { what: &'static str, step: usize },

    /// The diffusion matrix `a = sigma sigma*` could not be inverted.
    #[error("diffusion matrix numerically singular (condition number {cond:.3e} at t={t})")]
    SingularDiffusion { t: f64, cond: f64 },

    #[error("invalid initial law: {0}")]
    InvalidLaw(String),

    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("argument out of range: {0}")]
    OutOfRange(String),

    /// A stochastic-integral estimator was asked to run on a simulation
    /// that did not retain its Brownian increments.
    #[error("brownian increments were not retained for this run")]
    MissingIncrements,

    /// Configuration file syntax or typing problem.
    #[error("config parse error (line {line}): {msg}")]
    Parse { line: usize, msg: String },

    /// One or more standing-assumption checks failed for the given parameters.
    #[error("assumption validation failed:\n{0}")]
    Validation(String),

    /// Inconsistent arguments (contract violation between components).
    #[error("{0}")]
    Invalid(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

fn step_suffix(step: &Option<usize>) -> String {
    match step {
        Some(m) => format!(" (step {m})"),
        None => String::new(),
    }
}

impl Error {
    /// Attach a step index to errors raised inside a time-stepping loop.
    pub(crate) fn at_step(self, m: usize) -> Error {
        match self {
            Error::SingularEvaluation { step: None } => {
                Error::SingularEvaluation { step: Some(m) }
            }
            other => other,
        }
    }
}
