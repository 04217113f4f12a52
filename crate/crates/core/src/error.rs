use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid cluster grant: {0}")]
    InvalidGrant(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("empty selection: {0}")]
    EmptySelection(String),

    #[error("no candidate survived selection: {0}")]
    NoCandidate(String),

    #[error(
        "extrapolation unsupported: sequence length {seq_len} exceeds trained context {n_ctx}"
    )]
    ExtrapolationUnsupported { seq_len: usize, n_ctx: usize },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("training diverged at step {step}")]
    Diverged { step: usize },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: u64,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("gradient check failed for {op}: {detail}")]
    GradCheck { op: String, detail: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
