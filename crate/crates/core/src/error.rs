use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A binary or text file does not follow its declared layout.
    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    /// A manifest record breaks one of its invariants.
    #[error("schema violation in record `{record}`, field `{field}`: {reason}")]
    Schema {
        record: String,
        field: String,
        reason: String,
    },

    #[error("dimension mismatch for {what}: expected {expected}, got {actual}")]
    DimMismatch {
        what: String,
        expected: usize,
        actual: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing input {path} (produced by the `{stage}` stage)")]
    MissingStageInput { path: PathBuf, stage: &'static str },

    #[error("training failed: {0}")]
    Training(String),

    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub fn schema(
        record: impl Into<String>,
        field: impl Into<String>,
        reason: impl Into<String>,
    ) -> Self {
        Error::Schema {
            record: record.into(),
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn dim(what: impl Into<String>, expected: usize, actual: usize) -> Self {
        Error::DimMismatch {
            what: what.into(),
            expected,
            actual,
        }
    }

    /// Process exit code: 2 for I/O failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::MissingStageInput { .. } => 2,
            _ => 1,
        }
    }
}
