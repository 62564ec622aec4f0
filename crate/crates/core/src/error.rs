use thiserror::Error;

/// Errors surfaced by the estimators and the path engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("grid mismatch: expected {expected} steps, got {got}")]
    GridMismatch { expected: usize, got: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("degenerate gamma: gamma = {0} is below tolerance")]
    DegenerateGamma(f64),

    #[error("empty slab at level r = {r}, width eps = {eps}")]
    EmptySlab { r: f64, eps: f64 },

    #[error("insufficient local samples near r = {r}: effective sample size {ess:.1} < {required}")]
    InsufficientLocalSamples { r: f64, ess: f64, required: f64 },

    #[error("non-finite value in cylindrical functional evaluation")]
    NonFinite,

    #[error("ensemble file corrupt: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
