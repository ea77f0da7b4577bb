use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid type distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid Pareto weight: {0}")]
    InvalidWeight(String),

    #[error("invalid value model: {0}")]
    InvalidValueModel(String),

    /// The requested integrator cannot handle this model/integrand pair.
    /// Callers should retry with a Monte Carlo integrator.
    #[error("{reason}; fall back to monte-carlo integration")]
    NeedsMonteCarlo { reason: String },

    #[error("profit grid is missing the jump knot at {0}")]
    MissingJumpKnot(f64),

    #[error("quantile grid of {0} cells is too coarse (need at least 16)")]
    GridTooCoarse(usize),

    #[error("step function is increasing at {0}")]
    IncreasingStep(f64),

    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("invalid market structure: {0}")]
    InvalidStructure(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("{path}: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
