use std::path::PathBuf;

/// Every failure the library can surface.
///
/// The variants map one-to-one onto the exit-code classes of the CLI, see
/// [`Error::class`].
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("usage error: {0}")]
    Usage(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error in {path}:{line}: {message}")]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("negative sampling exhausted for user {user}: every item interacted and rated >= 4")]
    SamplingExhausted { user: usize },

    #[error("non-finite {term} at iteration {iteration}: {value}")]
    NonFinite {
        term: &'static str,
        iteration: u64,
        value: f64,
    },

    #[error("configuration error: {0}")]
    Config(String),
}

/// Coarse failure class, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    InputOutput,
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Usage(_) | Error::Config(_) => ErrorClass::Usage,
            Error::Io { .. } | Error::Format { .. } | Error::EmptyDataset(_) => {
                ErrorClass::InputOutput
            }
            Error::Domain(_) | Error::SamplingExhausted { .. } | Error::NonFinite { .. } => {
                ErrorClass::Numerical
            }
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
