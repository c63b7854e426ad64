use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("no convergence after {iterations} iterations (last residual {residual:e})")]
    IterationLimit { iterations: usize, residual: f64 },
    #[error("beta ladder exhausted at beta = {beta} with interior change {change:e}")]
    LadderExhausted { beta: f64, change: f64 },
    #[error("step budget exceeded with {survivors} particles still alive")]
    Truncated { survivors: usize },
    #[error("rejection budget exhausted after {attempts} attempts")]
    RejectionBudget { attempts: u64 },
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
    #[error("limit exceeded: {0}")]
    Limit(String),
    #[error("numerical precision: {0}")]
    Precision(String),
    #[error("quadrature: {0}")]
    Quadrature(String),
    #[error("schema: {0}")]
    Schema(String),
    #[error("merge: {0}")]
    Merge(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("missing dependency: {0}")]
    Missing(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn precondition<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Precondition(msg.into()))
}
