use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SurgeError {
    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("total weight collapse at t={t}, k={k}")]
    WeightCollapse { t: usize, k: usize },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPositiveSemidefinite { min_eigenvalue: f64 },

    #[error("singular innovation covariance")]
    SingularInnovation,

    #[error("non-finite value in {what} for particle {particle} at t={t}, k={k}")]
    NonFinite {
        what: &'static str,
        particle: usize,
        t: usize,
        k: usize,
    },

    #[error("weights are not normalized (sum = {sum})")]
    Unnormalized { sum: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("trajectory diverged at step {step}")]
    Diverged { step: usize },
}

pub type Result<T> = std::result::Result<T, SurgeError>;
