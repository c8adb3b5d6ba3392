use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A sample whose label, kind and delay cannot coexist. Always a pipeline bug.
    #[error("invalid sample: {0}")]
    InvalidSample(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// Non-finite parameters or loss values encountered during training.
    #[error("numerical fault: {0}")]
    Fault(String),

    #[error("parse error on line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
