use std::io;

/// Errors produced anywhere in the pipeline.
///
/// Variants are grouped so the command-line front end can map them onto
/// distinct exit codes (configuration, data and numeric failures).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error in `{field}`: {msg}")]
    Config { field: String, msg: String },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("ODE integration diverged at s = {s}")]
    IntegrationDiverged { s: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("model format: {0}")]
    ModelFormat(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Coarse error categories, one per command-line exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config { .. } | Error::InvalidArgument(_) => ErrorClass::Config,
            Error::DegenerateData(_) | Error::IntegrationDiverged { .. } | Error::NonFinite(_) => ErrorClass::Numeric,
            Error::Parse { .. }
            | Error::Schema(_)
            | Error::DimMismatch { .. }
            | Error::ModelFormat(_)
            | Error::Io(_)
            | Error::Json(_)
            | Error::Csv(_) => ErrorClass::Data,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn schema(msg: impl Into<String>) -> Self {
        Error::Schema(msg.into())
    }

    pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
        if expected == got {
            Ok(())
        } else {
            Err(Error::DimMismatch { expected, got })
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
