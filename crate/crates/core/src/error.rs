use thiserror::Error;

/// Errors raised by the numerical kernels, the estimators and the experiment harness.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is not symmetric (relative asymmetry {asymmetry:.3e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("matrix contains NaN or infinite entries")]
    NotFinite,
    #[error("matrix is not positive semidefinite (eigenvalue {eigenvalue:.3e})")]
    NotPsd { eigenvalue: f64 },
    #[error("matrix is not positive definite")]
    NotPd,
    #[error("matrix is numerically singular: {0}")]
    Singular(String),
    #[error("matrix is rank deficient (condition ratio {ratio:.3e})")]
    RankDeficient { ratio: f64 },
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid canonical correlations: {0}")]
    InvalidLambdas(String),
    #[error("frame columns are not orthonormal (deviation {deviation:.3e})")]
    FrameNotOrthonormal { deviation: f64 },
    #[error("canonical correlation {value} exceeds 1")]
    CorrelationOutOfRange { value: f64 },
    #[error("too few samples: {0}")]
    TooFewSamples(String),
    #[error("rank {k} exceeds the available {max}")]
    RankTooLarge { k: usize, max: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("matched-product condition violated (deviation {deviation:.3e})")]
    MatchedProductViolated { deviation: f64 },
    #[error("entries must be positive")]
    NonPositiveEntries,
    #[error("singular value gap is degenerate: sigma_k = {sigma_k}, sigma_k+1 = {sigma_k1}")]
    DegenerateGap { sigma_k: f64, sigma_k1: f64 },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("all {0} replicates failed")]
    AllReplicatesFailed(usize),
    #[error("need at least 3 points to fit a slope, got {0}")]
    TooFewPoints(usize),
    #[error("non-positive loss {0} cannot be log-transformed")]
    NonPositiveLoss(f64),
    #[error("result grids do not match: {0}")]
    MismatchedGrids(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        if e.is_io() {
            Error::Io(e.to_string())
        } else {
            Error::Parse(e.to_string())
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        if e.is_io_error() {
            Error::Io(e.to_string())
        } else {
            Error::Parse(e.to_string())
        }
    }
}
