use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("label {label} at index {index} is outside 1..={k}")]
    Encoding { index: usize, label: usize, k: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch}, layer {layer}: {reason}")]
    Training {
        epoch: usize,
        layer: usize,
        reason: String,
    },

    #[error("degrees-of-freedom estimate failed at replicate {replicate} for model `{model}`: {reason}")]
    Estimate {
        model: String,
        replicate: usize,
        reason: String,
    },

    #[error("format error at byte {offset}: {reason}")]
    Format { offset: u64, reason: String },

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the CLI: 1 usage, 2 data/format, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Unsupported(_) => 1,
            Error::Encoding { .. }
            | Error::Dimension(_)
            | Error::Format { .. }
            | Error::Io(_)
            | Error::Csv(_)
            | Error::Json(_) => 2,
            Error::Domain(_)
            | Error::Training { .. }
            | Error::Estimate { .. }
            | Error::UndefinedCorrelation(_) => 3,
        }
    }
}
