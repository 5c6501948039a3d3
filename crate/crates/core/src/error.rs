use thiserror::Error;

/// Errors produced by the dropout training library.
#[derive(Debug, Error)]
pub enum DroError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("singular system: {0}")]
    Singular(String),

    #[error(
        "no convergence after {iterations} iterations (gradient inf-norm {grad_norm:.3e}); last iterate retained"
    )]
    NoConvergence {
        iterations: usize,
        grad_norm: f64,
        last_iterate: Vec<f64>,
    },

    #[error("step size too large: iterate diverged (|beta|_inf = {0:.3e})")]
    Diverged(f64),

    #[error("{d} coordinates is too many for exact enumeration (limit {limit}); use a Monte Carlo route")]
    TooManyMasks { d: usize, limit: usize },

    #[error("tuning rule undefined: mu must be positive (got {0})")]
    NonPositiveMu(f64),

    #[error("variance undefined for a sample of size {0}")]
    VarianceUndefined(usize),

    #[error("objective is not finite at {0}")]
    NonFinite(String),

    #[error("MLMC level {level} exceeds cap {cap}")]
    LevelCapExceeded { level: usize, cap: usize },

    #[error("MLMC replica {replica} failed: {source}")]
    ReplicaFailed {
        replica: usize,
        #[source]
        source: Box<DroError>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, DroError>;
