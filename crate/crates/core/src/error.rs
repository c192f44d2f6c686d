use thiserror::Error;

/// Every failure the library reports. Messages are stable: the CLI and the
/// tests match on them.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum FpfError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("covariance not PSD")]
    CovarianceNotPsd,
    #[error("non-finite drift at particle {0}")]
    NonFiniteDrift(usize),
    #[error("exact solver requires affine h")]
    NonAffineObservation,
    #[error("Gram matrix singular; increase λ or N")]
    GramSingular,
    #[error("inadmissible control at step {step}: {} particle(s) flagged {indices:?}", indices.len())]
    Inadmissible { step: usize, indices: Vec<usize> },
    #[error("Riccati step unstable; reduce dt")]
    RiccatiUnstable,
    #[error("weight collapse")]
    WeightCollapse,
    #[error("instability")]
    Instability,
    #[error("degenerate ensemble; specify bandwidth")]
    DegenerateEnsemble,
    #[error("density ratio nonpositive")]
    DensityRatioNonpositive,
    #[error("∇log p too large for q")]
    HypothesisViolated,
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("grid mismatch")]
    GridMismatch,
    #[error("unknown identity {0}")]
    UnknownIdentity(usize),
    #[error("model invalid: {0}")]
    InvalidModel(String),
    #[error("io: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, FpfError>;

impl From<std::io::Error> for FpfError {
    fn from(e: std::io::Error) -> Self {
        FpfError::Io(e.to_string())
    }
}

impl From<csv::Error> for FpfError {
    fn from(e: csv::Error) -> Self {
        FpfError::Io(e.to_string())
    }
}
