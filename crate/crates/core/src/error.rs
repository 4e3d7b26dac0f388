use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("EmptyTrace: trace contains no system-call tokens")]
    EmptyTrace,

    #[error("MalformedToken: {token:?} at byte offset {offset} is not a non-negative integer")]
    MalformedToken { token: String, offset: usize },

    #[error("MissingDirectory: {0}")]
    MissingDirectory(PathBuf),

    #[error("EmptyDataset: no trace files found under {0}")]
    EmptyDataset(PathBuf),

    #[error("{path}: {source}")]
    TraceFile {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("EmptyInput: {0}")]
    EmptyInput(&'static str),

    #[error("DimensionMismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("NonSymmetric: |a[{row}][{col}] - a[{col}][{row}]| exceeds tolerance")]
    NonSymmetric { row: usize, col: usize },

    #[error("NonConvergence: no convergence within {0} sweeps")]
    NonConvergence(usize),

    #[error("NonPositiveWidth: RBF width must be > 0")]
    NonPositiveWidth,

    #[error("TooFewPoints: need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("SingleClassInput: estimator training data must contain both classes")]
    SingleClassInput,

    #[error("SingularSystem: linear system has no unique solution")]
    SingularSystem,

    #[error("InvalidProbability: {0}")]
    InvalidProbability(f64),

    #[error("TooFewTargets: need at least {needed} target vectors, got {got}")]
    TooFewTargets { needed: usize, got: usize },

    #[error("EmptyScores: threshold calibration needs at least one score")]
    EmptyScores,

    #[error("SingleClassValidation: validation data must contain both normal and attack instances")]
    SingleClassValidation,

    #[error("LengthMismatch: {0} labels vs {1} labels")]
    LengthMismatch(usize, usize),

    #[error("SingleClass: AUC needs both target and non-target instances")]
    SingleClass,

    #[error("unlabeled instance where a Normal/Attack label is required")]
    Unlabeled,

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn in_file(self, path: impl Into<PathBuf>) -> Error {
        Error::TraceFile {
            path: path.into(),
            source: Box::new(self),
        }
    }
}
