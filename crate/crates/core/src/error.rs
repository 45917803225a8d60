use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error at row {row}, column '{column}': {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("unknown category '{value}' at row {row}, column '{column}'")]
    UnknownCategory {
        row: usize,
        column: String,
        value: String,
    },

    #[error("missing value at row {row}, column '{column}'")]
    MissingValue { row: usize, column: String },

    #[error("unknown feature '{0}'")]
    UnknownFeature(String),

    #[error("feature '{name}' has kind {found}, expected {expected}")]
    KindMismatch {
        name: String,
        expected: &'static str,
        found: &'static str,
    },

    #[error("feature '{feature}' is constant; cannot scale")]
    ConstantFeature { feature: String },

    #[error("rank-deficient design; collinear columns: {}", columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    #[error(
        "linear predictor overflow in exp(eta) (max eta {max_eta:.3}); consider rescaling features"
    )]
    Overflow { max_eta: f64 },

    #[error("input layout mismatch: {0}")]
    Layout(String),

    #[error("training diverged at epoch {epoch}")]
    Diverged {
        epoch: usize,
        log: Vec<crate::cann::EpochRecord>,
    },

    #[error("all candidates failed: {}", diagnostics.join("; "))]
    AllCandidatesFailed { diagnostics: Vec<String> },

    #[error("stale artifact {path}: {reason}; re-run the upstream stage")]
    StaleArtifact { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
