use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid beam geometry: {0}")]
    InvalidGeometry(String),

    #[error("grid too small: captures {captured:.6} of the mode energy (need {required})")]
    GridTooSmall { captured: f64, required: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid superposition: a^2 + b^2 = {0}")]
    InvalidSuperposition(f64),

    #[error("complementary probabilities {name} sum to {sum:.4}, outside 1 +/- {tolerance}")]
    PairSum {
        name: &'static str,
        sum: f64,
        tolerance: f64,
    },

    #[error("probability {0} outside [0, 1]")]
    ProbabilityRange(f64),

    #[error("state not normalized: norm^2 = {0}")]
    NotNormalized(f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid density matrix: {0}")]
    InvalidDensity(String),

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("bin count {0} is not a positive multiple of 8")]
    InvalidBinCount(usize),

    #[error("angular bin {0} contains no pixels")]
    EmptyBin(usize),

    #[error("fit failed: {0}")]
    FitFailed(String),

    #[error("insufficient fringe data: {0}")]
    InsufficientData(String),

    #[error("configuration {0} recorded zero clicks")]
    ZeroCounts(String),

    #[error("all network paths are blocked")]
    AllPathsBlocked,

    #[error("projector set is rank deficient (rank {rank} < {required})")]
    RankDeficient { rank: usize, required: usize },

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("malformed image: {0}")]
    Image(String),

    #[error("malformed raster: {0}")]
    Raster(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name: name.to_string(),
        reason: reason.into(),
    }
}
