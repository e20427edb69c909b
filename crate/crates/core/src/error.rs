use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("malformed file: {0}")]
    Format(String),

    #[error("record {index} has zero propensity; importance weight is undefined")]
    ZeroPropensity { index: usize },

    #[error("policy has no overlap with log (all importance weights are zero)")]
    NoOverlap,

    #[error("final embeddings are stale; call propagate first")]
    StaleCache,

    #[error("non-finite gradient encountered; optimizer step aborted")]
    NonFiniteGradient,

    #[error("{failed} of {total} bootstrap resamples failed (limit is 20%)")]
    BootstrapFailures { failed: usize, total: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: &str, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.to_string(),
            reason: reason.into(),
        }
    }

    /// Short machine-readable tag for the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidConfig { .. } => "invalid_config",
            Error::InvalidInput(_) => "invalid_input",
            Error::DimensionMismatch(_) => "dimension_mismatch",
            Error::Parse { .. } => "parse",
            Error::Format(_) => "format",
            Error::ZeroPropensity { .. } => "zero_propensity",
            Error::NoOverlap => "no_overlap",
            Error::StaleCache => "stale_cache",
            Error::NonFiniteGradient => "non_finite_gradient",
            Error::BootstrapFailures { .. } => "bootstrap_failures",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
