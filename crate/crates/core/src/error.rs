use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("patch extraction failed: {0}")]
    Extraction(String),
    #[error("dictionary initialization failed: {0}")]
    Initialization(String),
    #[error("model fit failed: {0}")]
    Fit(String),
    #[error("degenerate statistical input: {0}")]
    Degenerate(String),
    #[error("evaluation failed: {0}")]
    Evaluation(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable code, printed by the CLI and mapped by the C ABI.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { .. } => "E_IO",
            Error::Format(_) => "E_FORMAT",
            Error::Argument(_) => "E_ARGUMENT",
            Error::Extraction(_) => "E_EXTRACTION",
            Error::Initialization(_) => "E_INIT",
            Error::Fit(_) => "E_FIT",
            Error::Degenerate(_) => "E_DEGENERATE",
            Error::Evaluation(_) => "E_EVALUATION",
        }
    }
}

macro_rules! arg_err {
    ($($t:tt)*) => { $crate::error::Error::Argument(format!($($t)*)) };
}
pub(crate) use arg_err;
