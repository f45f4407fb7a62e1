use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    /// Non-finite loss or a loss increase during fixed-step descent.
    #[error("training diverged for neuron {neuron} at epoch {epoch}: {reason}")]
    Divergence {
        neuron: usize,
        epoch: usize,
        reason: String,
    },

    /// Every eigenvalue of the spectrum is zero; no direction carries information.
    #[error("degenerate spectrum: {0}")]
    DegenerateSpectrum(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("layout error: {0}")]
    Layout(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}
