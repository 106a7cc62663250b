use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied parameter violates an operation's precondition.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Linear-algebra failure or a matrix that fails a numeric requirement.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Input data violates a domain rule (non-positive price, bad state id, ...).
    #[error("data error: {0}")]
    Data(String),

    /// A return series has zero variance inside an epoch.
    #[error("degenerate series: asset `{asset}` is constant within the epoch{}", .tau.map(|t| format!(" ending at index {t}")).unwrap_or_default())]
    Degenerate { asset: String, tau: Option<usize> },

    /// The operation is not defined for the supplied matrix shape.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("format error at {path}:{line}: {msg}")]
    Format {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("I/O error on {path}: {source}")]
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
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attach an epoch-end index to errors raised inside a rolling computation.
    pub(crate) fn at_epoch(self, tau: usize) -> Self {
        match self {
            Error::Degenerate { asset, .. } => Error::Degenerate {
                asset,
                tau: Some(tau),
            },
            Error::Parameter(m) => Error::Parameter(format!("epoch ending at {tau}: {m}")),
            Error::Numeric(m) => Error::Numeric(format!("epoch ending at {tau}: {m}")),
            Error::Data(m) => Error::Data(format!("epoch ending at {tau}: {m}")),
            Error::Domain(m) => Error::Domain(format!("epoch ending at {tau}: {m}")),
            other => other,
        }
    }
}
