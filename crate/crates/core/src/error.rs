use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the detection pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape {shape:?} expects {expected} elements, got {actual}")]
    ShapeMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },
    #[error("incompatible shape: {0}")]
    IncompatibleShape(String),
    #[error("invalid probability distribution: {0}")]
    InvalidDistribution(String),
    #[error("k-NN scoring needs a nonempty training set")]
    EmptyTrainingSet,
    #[error("k = {k} exceeds training set size {available}")]
    KTooLarge { k: usize, available: usize },
    #[error("operation `{op}` is not supported by model {model}")]
    WrongModelKind {
        op: &'static str,
        model: &'static str,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("number of transforms per point must be >= 1, got {0}")]
    InvalidN(usize),
    #[error("cannot aggregate an empty score vector")]
    EmptyVector,
    #[error("calibration set is empty")]
    EmptyCalibration,
    #[error("non-finite score {0}")]
    NonFiniteScore(f64),
    #[error("epsilon must lie in (0, 1), got {0}")]
    InvalidEpsilon(f64),
    #[error("CAD p-value needs at least 2 scores, got {0}")]
    TooFewScores(usize),
    #[error("metric input list is empty")]
    EmptyInput,
    #[error("resampling pool is empty")]
    EmptyPool,
    #[error("p-value {value} is not on the grid of k = {k}")]
    OffGridValue { value: f64, k: usize },
    #[error("schema violation at line {line}: {reason}")]
    SchemaViolation { line: usize, reason: String },
    #[error("duplicate record id `{0}`")]
    DuplicateId(String),
    #[error("artifact fingerprint {artifact} does not match configuration fingerprint {config}")]
    FingerprintMismatch { artifact: String, config: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the filesystem rather than of the data.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
