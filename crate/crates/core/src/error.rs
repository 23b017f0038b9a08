use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration, shapes, or setup detected before work starts.
    #[error("configuration error: {0}")]
    Config(String),

    /// Configuration file rejected at a specific line.
    #[error("{path}:{line}: {message}")]
    ConfigLine {
        path: String,
        line: usize,
        message: String,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A gradient or loss went non-finite. `layer` is set when the
    /// offending parameter block is known.
    #[error("non-finite value in {what}{}", layer.map(|l| format!(" (layer {l})")).unwrap_or_default())]
    NonFinite { what: String, layer: Option<usize> },

    /// Misuse of an API by the caller, e.g. stepping a finished episode.
    #[error("invalid call: {0}")]
    Caller(String),

    #[error("timed out waiting for trajectories: {0}")]
    Timeout(String),

    #[error("malformed file {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by bad configuration rather than a failure at
    /// run time. The CLI maps these to a distinct exit status.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::ConfigLine { .. })
    }
}
