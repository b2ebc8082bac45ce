use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("singular tensor (determinant {det:e})")]
    SingularTensor { det: f64 },

    #[error("singular laminate combination (determinant {det:e})")]
    SingularCombination { det: f64 },

    #[error("volume map does not cross target {target} on the gamma search interval")]
    NotBracketed { target: f64 },

    #[error("constrained stiffness matrix is not positive definite")]
    SingularSystem,

    #[error("{phase} did not converge within {iterations} iterations")]
    NonConvergence { phase: &'static str, iterations: usize },

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Divergence { epoch: usize },

    #[error("architecture {0} cannot predict a topology from parameters alone")]
    NonPredictive(&'static str),

    #[error("corrupt file: bad magic")]
    CorruptMagic,

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("truncated payload")]
    TruncatedPayload,

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error("dataset too small: {0}")]
    DatasetTooSmall(String),

    #[error("empty test split")]
    EmptyTestSet,

    #[error("zero-norm ground truth at entry {0}")]
    ZeroNormTruth(usize),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
