use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("numeric error in {context}: {detail}")]
    Numeric { context: String, detail: String },

    #[error("degenerate batch in {op}: {detail}")]
    DegenerateBatch { op: &'static str, detail: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("format error in {path}{}: {detail}", line.map(|l| format!(" line {l}")).unwrap_or_default())]
    Format { path: String, line: Option<usize>, detail: String },

    #[error("checkpoint format error in field `{field}`: {detail}")]
    Checkpoint { field: String, detail: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension { op, detail: detail.into() }
    }

    pub(crate) fn numeric(context: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Numeric { context: context.into(), detail: detail.into() }
    }

    pub(crate) fn format(path: impl Into<String>, line: Option<usize>, detail: impl Into<String>) -> Self {
        Error::Format { path: path.into(), line, detail: detail.into() }
    }

    pub(crate) fn checkpoint(field: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Checkpoint { field: field.into(), detail: detail.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code for the command-line driver: 1 usage/config,
    /// 2 data format, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Contract(_) => 1,
            Error::InvalidInput(_) | Error::Format { .. } | Error::Checkpoint { .. } | Error::Io { .. } | Error::Dimension { .. } => 2,
            Error::Numeric { .. } | Error::DegenerateBatch { .. } => 3,
        }
    }
}
