use std::path::PathBuf;

/// Errors raised anywhere in the phenotyping pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid record: {0}")]
    Validation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("stratification error: {0}")]
    Stratification(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("range out of bounds: {0}")]
    Bounds(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("logistic separation: {0}")]
    Separation(String),

    #[error("no convergence: {0}")]
    NonConvergence(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Stratification(_) | Error::UndefinedMetric(_) => {
                ErrorKind::Config
            }
            Error::Parse { .. }
            | Error::Validation(_)
            | Error::Bounds(_)
            | Error::EmptyInput(_)
            | Error::Io { .. } => ErrorKind::Data,
            Error::Dimension { .. }
            | Error::Degenerate(_)
            | Error::Contract(_)
            | Error::Separation(_)
            | Error::NonConvergence(_) => ErrorKind::Numeric,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
