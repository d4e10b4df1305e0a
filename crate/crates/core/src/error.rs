use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, BlinkError>;

#[derive(Debug, Error)]
pub enum BlinkError {
    #[error("domain error: {0}")]
    Domain(String),

    /// The count histogram has a single mode, so on and off levels cannot be separated.
    #[error("count histogram is not bimodal; on/off levels cannot be separated")]
    NoSeparation,

    #[error("state sequence holds no interior (uncensored) dwell")]
    EmptyHistogram,

    #[error("insufficient data: need at least {needed} {what}, got {got}")]
    InsufficientData {
        what: &'static str,
        needed: usize,
        got: usize,
    },

    #[error("optimizer diverged: {0}")]
    Divergence(String),

    #[error("normal equations are rank deficient; use a positive ridge penalty")]
    RankDeficient,

    #[error("degenerate cluster: median and longest-duration points share an occurrence count")]
    DegenerateCluster,

    #[error("no lifetime estimate could be extracted within the iteration budget")]
    NoEstimate,

    #[error("{path}: line {line}: {msg}")]
    Parse { path: PathBuf, line: u64, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(BlinkError::Domain(msg.into()))
}
