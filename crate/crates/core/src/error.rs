use thiserror::Error;

/// Errors raised anywhere in the simulation stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    InvalidDims(String),

    #[error("matrix is not Hermitian (max deviation {0:e})")]
    NotHermitian(f64),

    #[error("matrix is not positive semidefinite (min eigenvalue {0:e})")]
    NotPositive(f64),

    #[error("trace is not one (got {0})")]
    InvalidTrace(f64),

    #[error("photon-number cutoff must be at least {min} (got {got})")]
    CutoffTooSmall { min: usize, got: usize },

    #[error("unknown mode label `{0}`")]
    UnknownMode(String),

    #[error("duplicate mode label `{0}`")]
    ModeCollision(String),

    #[error("operator is not passive (largest singular value {0})")]
    NotPassive(f64),

    #[error("visibility must lie in [0, 1] (got {0})")]
    InvalidVisibility(f64),

    #[error("Fock space of dimension {dim} exceeds the configured limit {limit}")]
    SpaceTooLarge { dim: usize, limit: usize },

    #[error("measurement record is not informationally complete (operator rank {0} < 16)")]
    NotInformationallyComplete(usize),

    #[error("invalid quantum state: {0}")]
    InvalidState(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
