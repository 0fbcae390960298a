use thiserror::Error;

pub type Result<T, E = DdnError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum DdnError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("value {value} outside range [{lo}, {hi}]")]
    OutOfRange { value: f64, lo: f64, hi: f64 },

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("column '{0}' has zero variance on the training split")]
    ZeroVariance(String),

    #[error("unknown task '{0}' (valid tasks: squares, half_gaussian, gaussian_stick, elastic_ring)")]
    UnknownTask(String),

    #[error("malformed checkpoint: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl DdnError {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        DdnError::Dimension(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        DdnError::Config(msg.into())
    }
}
