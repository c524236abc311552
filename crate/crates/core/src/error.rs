use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid value for `{field}`: {reason}")]
    Invalid { field: String, reason: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("config parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("snapshot error: {0}")]
    Snapshot(String),

    #[error("calibration did not bracket the target: E[W_T] = {achieved} at b = {b_max} is below {target}")]
    NotBracketing { b_max: f64, achieved: f64, target: f64 },

    #[error("mismatched inputs: {0}")]
    Mismatch(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable identifier for machine-readable error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Invalid { .. } => "invalid",
            Error::Domain(_) => "domain",
            Error::Precondition(_) => "precondition",
            Error::Parse { .. } => "parse",
            Error::Snapshot(_) => "snapshot",
            Error::NotBracketing { .. } => "not_bracketing",
            Error::Mismatch(_) => "mismatch",
            Error::Io { .. } => "io",
        }
    }
}
