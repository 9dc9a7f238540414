use std::path::PathBuf;

/// Errors surfaced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A configuration value violates an invariant. `key` names the offending entry.
    #[error("invalid configuration `{key}`: {reason}")]
    Config { key: String, reason: String },

    /// The configuration file could not be parsed.
    #[error("malformed configuration {path}: {message}")]
    ConfigSyntax { path: PathBuf, message: String },

    #[error("no informative samples in batch")]
    NoInformativeSamples,

    /// Non-finite values appeared during training.
    #[error("training fault at step {step}: {detail}")]
    TrainingFault { step: usize, detail: String },

    /// Ledgers being compared do not cover the same number of steps.
    #[error("cost comparison mismatch: {0}")]
    Comparison(String),

    #[error("malformed record in {path} line {line}: {message}")]
    Record { path: PathBuf, line: usize, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config { key: key.into(), reason: reason.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
