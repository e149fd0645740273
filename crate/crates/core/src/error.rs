use std::path::PathBuf;

/// Errors surfaced by the toolkit. Each variant maps onto one CLI exit code
/// class (see [`Error::exit_code`]).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("generation failed at step {step}: {detail}")]
    Generation { step: usize, detail: String },

    #[error("corrupt dataset: {0}")]
    CorruptDataset(String),

    #[error("unsupported {what} version {found} (expected {expected})")]
    Version {
        what: &'static str,
        found: u32,
        expected: u32,
    },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("artifact mismatch: {0}")]
    Mismatch(String),

    #[error("non-finite {term} at epoch {epoch}")]
    NonFinite { term: String, epoch: usize },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("degenerate test: {0}")]
    DegenerateTest(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// 2 = configuration, 3 = numerical failure, 4 = artifact mismatch, 1 = anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::NonFinite { .. } | Error::Generation { .. } => 3,
            Error::Mismatch(_)
            | Error::Version { .. }
            | Error::CorruptCheckpoint(_)
            | Error::CorruptDataset(_) => 4,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
