use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("explosive trajectory: |x| = {value:e} exceeds guard {guard:e} at step {step}")]
    Explosive { step: usize, value: f64, guard: f64 },

    #[error("degenerate density: {0}")]
    Degenerate(String),

    #[error("degenerate proposal: acceptance rate {rate:e} after {draws} draws")]
    DegenerateProposal { rate: f64, draws: usize },

    #[error("outside prior support: {0}")]
    OutOfSupport(String),

    #[error("autodiff: {0}")]
    Autodiff(String),

    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {what}: {detail}")]
    Format { what: String, detail: String },

    #[error("schema version mismatch in {path}: expected {expected}, found {found}")]
    Version {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("missing artifact: {0}")]
    Missing(PathBuf),

    #[error("seed collision: {0} already holds a run manifest")]
    SeedCollision(PathBuf),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: impl Into<String>, detail: impl ToString) -> Self {
        Error::Format {
            what: what.into(),
            detail: detail.to_string(),
        }
    }

    pub(crate) fn in_round(self, round: usize) -> Self {
        Error::Round {
            round,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
