use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid shape: {0}")]
    Shape(String),

    #[error(
        "covariance plus ridge {ridge} is not positive definite; increase the ridge coefficient"
    )]
    NotPositiveDefinite { ridge: f64 },

    #[error("empty part: row {part} of the matching matrix sums to zero")]
    EmptyPart { part: usize },

    #[error("infeasible partial assignment: {parts} parts cannot be matched to {regions} regions")]
    InfeasibleAssignment { parts: usize, regions: usize },

    #[error("invalid options: {0}")]
    InvalidOptions(String),

    #[error("invalid corpus: {0}")]
    InvalidCorpus(String),

    #[error("only {survived} non-empty clusters survived k-means, {needed} parts requested")]
    TooFewClusters { survived: usize, needed: usize },

    #[error("{solver} diverged at iteration {iteration}; use a larger step control L")]
    Diverged { solver: String, iteration: usize },

    #[error("input has zero variance")]
    ZeroVariance,

    #[error("training set contains a single class")]
    SingleClass,

    #[error("empty input")]
    EmptyInput,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: bad magic {found:?}, expected \"PQAP\"")]
    BadMagic { path: PathBuf, found: [u8; 4] },

    #[error("{path}: unsupported version {found}, expected {expected}")]
    Version {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("{path}: truncated file, expected {expected} bytes but found {actual}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("{path}: header mismatch: {detail}")]
    Header { path: PathBuf, detail: String },

    #[error("missing file referenced by manifest: {0}")]
    MissingFile(PathBuf),

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
