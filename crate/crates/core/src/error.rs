use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: feature {feature}: {reason}")]
    Input {
        path: PathBuf,
        feature: String,
        reason: String,
    },

    #[error("{0}: file contains no features")]
    EmptyNetwork(PathBuf),

    #[error("{0}: coordinates look geographic (lon/lat); reproject to a planar CRS in meters")]
    GeographicCoordinates(PathBuf),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("road class {0} has no width in the class table")]
    MissingClass(u8),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("logistic fit did not converge after {iterations} iterations{hint}")]
    NonConvergence { iterations: usize, hint: &'static str },

    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("overlap rate undefined: our polygon set has zero area")]
    UndefinedRate,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
