use thiserror::Error;

use crate::lattice::LatticeError;
use crate::model::ModelError;
use crate::verify::VerifyError;
use crate::wave::WaveError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Top-level error of the crate; each module keeps its own error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Model(#[from] ModelError),

    #[error(transparent)]
    Lattice(#[from] LatticeError),

    #[error(transparent)]
    Wave(#[from] WaveError),

    #[error(transparent)]
    Verify(#[from] VerifyError),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}
