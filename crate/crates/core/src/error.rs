use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: expected {expected} bins, found {found}")]
    Shape { expected: usize, found: usize },

    #[error("bound violation at bins {bins:?}: values must lie in [{alpha}, {beta}]")]
    Bound { bins: Vec<usize>, alpha: f64, beta: f64 },

    #[error("normalization violation: mean of bin values is {mean}, expected 1")]
    Normalization { mean: f64 },

    #[error("constraint violated: C = {given} but C must exceed {min_c}")]
    Constraint { given: f64, min_c: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("instance too large: {0}")]
    Size(String),

    #[error("projection did not converge after {iterations} iterations")]
    NotConverged { iterations: usize },

    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
