use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid sphere: {0}")]
    InvalidSphere(String),

    #[error("invalid location: {0}")]
    InvalidLocation(String),

    #[error("location dimension does not match sphere dimension {expected}")]
    LocationDimension { expected: u8 },

    #[error("empty location list")]
    EmptyLocations,

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("distance {distance} out of range for great-circle model (max {max})")]
    DistanceOutOfRange { distance: f64, max: f64 },

    #[error("composite components must share metric and sphere")]
    MismatchedComposite,

    #[error("convex-sum weights must be nonnegative and sum to 1 (got sum {sum})")]
    BadWeights { sum: f64 },

    #[error("quadrature did not converge at {nodes} nodes (max coefficient change {delta:e})")]
    QuadratureNonConvergence { nodes: usize, delta: f64 },

    #[error("covariance matrix not factorizable after maximum jitter {max_jitter:e}")]
    Factorization { max_jitter: f64 },

    #[error("fit failed: {0}")]
    FitFailure(String),

    #[error("duplicate locations at indices {0} and {1}")]
    DuplicateLocations(usize, usize),

    #[error("design error: {0}")]
    Design(String),

    #[error("eligible set has {available} locations, {requested} requested")]
    EligibleShortfall { available: usize, requested: usize },

    #[error("grid error: {0}")]
    Grid(String),

    #[error("config error at {path}: {reason}")]
    Config { path: String, reason: String },

    #[error("rank-deficient regression design: {0}")]
    RankDeficient(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}
