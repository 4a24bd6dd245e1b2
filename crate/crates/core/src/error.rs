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

    #[error("malformed ENVI header: {0}")]
    Header(String),

    #[error("payload size mismatch: header implies {expected} bytes, found {actual}")]
    PayloadSize { expected: u64, actual: u64 },

    #[error("unsupported ENVI data type code {0}")]
    UnsupportedDataType(u32),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("need at least two classes, found {0}")]
    SingleClass(usize),

    #[error("ill-conditioned system (condition number {0:.3e})")]
    Singular(f64),

    #[error("supervised clustering failed up to k = {k_max}")]
    Escalation {
        k_max: usize,
        diagnostics: Box<crate::cluster::ClusterDiagnostics>,
    },

    #[error("model file: {0}")]
    Model(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
