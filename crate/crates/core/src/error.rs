use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The activity graph is not a tree, or a node reference is out of range.
    #[error("structural error: {0}")]
    Structure(String),

    /// Row and column totals handed to the lifting map disagree.
    #[error("balance error: sum(alpha) = {alpha_total}, sum(beta) = {beta_total}")]
    Balance { alpha_total: f64, beta_total: f64 },

    #[error("time grid mismatch: {0}")]
    GridMismatch(String),

    #[error("HJB iteration did not converge after {iterations} iterations (last update {last_update:e})")]
    NotConverged {
        iterations: usize,
        last_update: f64,
        history: Vec<f64>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
