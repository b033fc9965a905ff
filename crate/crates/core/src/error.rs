use thiserror::Error;

/// Errors raised by the estimation, cross-validation and I/O layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("tilted prior integral diverges: {0}")]
    IntegrabilityViolation(String),

    #[error("target mean {target} is outside the attainable range of the prior mean map")]
    Range { target: f64 },

    #[error("{what} did not converge after {iterations} iterations")]
    NonConvergence { what: &'static str, iterations: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("eigendecomposition failed: {0}")]
    DecompositionFailure(String),

    #[error("no feasible tilt for coordinate {index} (m = {value})")]
    InfeasibleTilt { index: usize, value: f64 },

    #[error("posterior variance of coordinate {index} collapsed to {variance:e}")]
    VarianceCollapse { index: usize, variance: f64 },

    #[error("fit has not converged")]
    NotConverged,

    #[error("Hessian is singular or not positive definite")]
    SingularHessian,

    #[error("rank-one downdate for sample {mu} is singular (1 - leverage = {denominator:e})")]
    RankOneSingularity { mu: usize, denominator: f64 },

    #[error("{failed} of {total} folds failed")]
    TooManyFoldFailures { failed: usize, total: usize },

    #[error("all grid points failed")]
    AllPointsFailed,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("target column `{0}` not found")]
    MissingTarget(String),

    #[error("non-numeric cell `{value}` at row {row}, column {column}")]
    NonNumericCell {
        row: usize,
        column: usize,
        value: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
