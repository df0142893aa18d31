use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("operator norm estimate did not converge after {iterations} iterations (last estimate {last_estimate})")]
    NormEstimate { last_estimate: f64, iterations: usize },

    #[error("linear operator is zero")]
    ZeroOperator,

    #[error("step-size regime violated: {0}")]
    Regime(String),

    #[error("iteration diverged at k = {k} (iterate norm {norm})")]
    Diverged { k: usize, norm: f64 },

    #[error("certificate error: {0}")]
    Certificate(String),

    #[error("reference saddle point rejected: KKT residual {residual:e} exceeds {threshold:e}")]
    SaddleRejected { residual: f64, threshold: f64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
