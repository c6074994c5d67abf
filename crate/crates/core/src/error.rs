use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument to {op}: {detail}")]
    InvalidArgument { op: &'static str, detail: String },

    #[error("invalid network spec: {0}")]
    Spec(String),

    #[error("malformed {what} at {location}: {detail}")]
    Format {
        what: &'static str,
        location: String,
        detail: String,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("missing artifact {path}: {hint}")]
    MissingArtifact { path: PathBuf, hint: String },

    #[error("digest mismatch for {path}: expected {expected}, got {actual}")]
    Digest {
        path: PathBuf,
        expected: String,
        actual: String,
    },

    #[error("network: {0}")]
    Network(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(op: &'static str, detail: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn format(what: &'static str, location: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            location: location.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable short tag used by the CLI's single-line error output.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::InvalidArgument { .. } => "invalid-argument",
            Error::Spec(_) => "spec",
            Error::Format { .. } => "format",
            Error::Config(_) => "config",
            Error::NonFinite(_) => "non-finite",
            Error::MissingArtifact { .. } => "missing-artifact",
            Error::Digest { .. } => "digest",
            Error::Network(_) => "network",
            Error::Io { .. } => "io",
        }
    }
}
