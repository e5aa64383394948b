use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Error type shared across the crate.
///
/// Variants are grouped by failure class so callers (notably the CLI) can
/// map them onto distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config error: {0}")]
    Config(String),

    /// Document/schema violations: bad boxes, unknown labels, cap overruns.
    #[error("document error: {0}")]
    Doc(String),

    #[error("corpus error: {0}")]
    Corpus(String),

    /// NaN/Inf aborts and failed numeric checks.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("non-deterministic loss function: two evaluations differ ({a} vs {b})")]
    NonDeterministic { a: f64, b: f64 },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable one-word class name, used by the CLI for exit codes and
    /// machine-parsable error lines.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
            Error::Config(_) => "config",
            Error::Doc(_) => "doc",
            Error::Corpus(_) => "corpus",
            Error::Numeric(_) => "numeric",
            Error::Checkpoint(_) => "checkpoint",
            Error::NonDeterministic { .. } => "numeric",
        }
    }
}
