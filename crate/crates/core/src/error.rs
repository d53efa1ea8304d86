use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("row {row} of the transition data sums to {sum}, expected 1")]
    NonStochasticMatrix { row: usize, sum: f64 },

    #[error("stage range [{t1}, {t2}] outside [0, {horizon}]")]
    StageOutOfRange { t1: usize, t2: usize, horizon: usize },

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("eliminated input Hessian at node {node} is not positive definite (min eigenvalue {min_eig:e})")]
    NotStronglyConvex { node: usize, min_eig: f64 },

    #[error("problem shape changed since the factorization ({0})")]
    ShapeChanged(String),

    #[error("factor cache was built for a different problem ({0})")]
    CacheMismatch(String),

    #[error("conjugate of the nonsmooth term is infinite at T(y)")]
    InfiniteConjugate,

    #[error("unsupported nonsmooth block: {0}")]
    UnsupportedSpec(String),

    #[error("line search stalled at tau = {tau:e}")]
    LineSearchStalled { tau: f64 },

    #[error("step size underflow (lambda = {lambda:e})")]
    StepUnderflow { lambda: f64 },

    #[error("node {node} has zero probability")]
    ZeroProbability { node: usize },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
