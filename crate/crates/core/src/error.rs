use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension {0}: must be at least 1")]
    InvalidDimension(usize),
    #[error("index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },
    #[error("fourth Haar moment formula is singular at dimension 1 (N^2 - 1 = 0)")]
    SingularMoment,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("matrix is not unitary (residual {residual:.3e} > {tolerance:.1e})")]
    NotUnitary { residual: f64, tolerance: f64 },
    #[error("matrix is not Hermitian (residual {residual:.3e})")]
    NotHermitian { residual: f64 },
    #[error("eigensolver did not converge (residual {residual:.3e})")]
    Eigensolver { residual: f64 },
    #[error("invalid circuit spec:\n{}", .0.join("\n"))]
    InvalidSpec(Vec<String>),
    #[error("invalid subsystem: {0}")]
    InvalidSubsystem(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("empty ensemble")]
    EmptyEnsemble,
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("accumulator schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("unknown statistic `{0}`")]
    UnknownStatistic(String),
    #[error("unknown variant `{0}`")]
    UnknownVariant(String),
    #[error("probe mismatch: {0}")]
    ProbeMismatch(String),
    #[error("{failed} of {total} samples failed numerical checks (limit {limit:.1}%)")]
    FailureRate {
        failed: usize,
        total: usize,
        limit: f64,
    },
    #[error("bad binary container {path}: {reason}")]
    BadContainer { path: PathBuf, reason: String },
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
