use std::path::PathBuf;

/// Errors raised anywhere in the pipeline.
///
/// `Contract` covers violated preconditions of an operation (wrong shapes,
/// non-scalar losses and the like). The CLI prints [`Error::class`] as the
/// one-word failure class.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("contract violation in {op}: {detail}")]
    Contract { op: &'static str, detail: String },

    #[error("non-finite value in {what}")]
    NonFinite { what: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    /// Shape disagreement; a contract violation with a shape-specific message.
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Contract { op, detail: format!("shape mismatch: {}", detail.into()) }
    }

    pub(crate) fn contract(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Contract { op, detail: detail.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json { path: path.into(), source }
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format { what, detail: detail.into() }
    }

    /// Stable single-word class for command-line reporting.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Contract { .. } => "contract",
            Error::NonFinite { .. } => "nonfinite",
            Error::Config(_) => "config",
            Error::Format { .. } => "format",
            Error::Io { .. } => "io",
            Error::Json { .. } => "json",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
