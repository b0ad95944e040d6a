use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum MerfError {
    #[error("{0}")]
    Parse(String),

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("no labelled observations")]
    NoLabelled,

    #[error("duplicate visit {visit} in cluster {cluster}")]
    DuplicateVisit { cluster: String, visit: u64 },

    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite update at EM iteration {iteration}: {what}")]
    NonFinite { iteration: usize, what: String },

    #[error("unknown cluster {0}; use unconditional prediction")]
    UnknownCluster(String),

    #[error("no screening score for cluster {0}")]
    MissingScreen(String),

    #[error("infeasible split: {0}")]
    Split(String),

    #[error("model container: {0}")]
    Container(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = MerfError> = std::result::Result<T, E>;
