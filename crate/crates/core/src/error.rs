use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("value {value} is outside the domain [{lower}, {upper}]")]
    Domain { value: f64, lower: f64, upper: f64 },

    #[error("invalid basis: {0}")]
    InvalidBasis(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("singular least-squares fit: basis of size {n_basis} is rank deficient at {n_points} observation points")]
    SingularFit { n_basis: usize, n_points: usize },

    #[error("decomposition failed: {0}")]
    Decomposition(String),

    #[error("design block for group {group} is rank deficient (smallest singular value {min_singular_value:e}); reduce m1 or m2")]
    RankDeficient { group: usize, min_singular_value: f64 },

    #[error("response has zero standard deviation and cannot be standardized")]
    ConstantResponse,

    #[error("non-finite objective value after sweep {sweep}")]
    NonFinite { sweep: usize },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: duplicate key {key}")]
    DuplicateKey { line: usize, key: String },

    #[error("missing data for: {}", .0.join("; "))]
    MissingData(Vec<String>),

    #[error("all fits failed: {}", .0.join("; "))]
    AllFailed(Vec<String>),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
