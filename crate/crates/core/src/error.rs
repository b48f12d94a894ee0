use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed grid header: {0}")]
    GridHeader(String),
    #[error("grid payload: {0}")]
    GridPayload(String),
    #[error("grids are not aligned")]
    Misaligned,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("degenerate data: {0}")]
    Degenerate(String),
    #[error("point ({x}, {y}) lies outside the tessellated region")]
    OutsideTessellation { x: f64, y: f64 },
    #[error("stage `{stage}` needs output of `{upstream}`: {reason}")]
    MissingUpstream {
        stage: String,
        upstream: String,
        reason: String,
    },
    #[error("configuration is invalid ({} finding(s))", .0.len())]
    Validation(Vec<crate::pipeline::Finding>),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }
}
