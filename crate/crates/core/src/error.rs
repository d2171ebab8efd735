use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("exponent {0} outside the admissible range (0, 2)")]
    ExponentRange(f64),
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("constraint violated: {0}")]
    Constraint(String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("singular banded system at time step {step}")]
    StepFailure { step: usize },
    #[error("config error: {0}")]
    Config(String),
    #[error("power iteration did not converge after {iterations} iterations (last estimate {last})")]
    Convergence { iterations: usize, last: f64 },
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
