use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid trace: {0}")]
    InvalidTrace(String),

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("ODI undefined: only {valid_duration:.0} s of valid data (minimum {minimum:.0} s)")]
    UndefinedOdi { valid_duration: f64, minimum: f64 },

    #[error("traces are not on the same sampling grid: {0}")]
    Alignment(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate fit: x has zero variance")]
    DegenerateFit,

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("synthetic spec error: {0}")]
    Spec(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 for bad input, 3 for insufficient or degenerate data, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Domain(_)
            | Error::InvalidTrace(_)
            | Error::Parse { .. }
            | Error::Format { .. }
            | Error::Manifest(_)
            | Error::Io { .. }
            | Error::Alignment(_)
            | Error::Spec(_)
            | Error::Config(_) => 2,
            Error::UndefinedOdi { .. }
            | Error::InsufficientData(_)
            | Error::DegenerateFit
            | Error::DegenerateInput(_) => 3,
            Error::Internal(_) => 1,
        }
    }
}
