use thiserror::Error;

/// Errors surfaced by the toolkit.
#[derive(Debug, Error)]
pub enum RtiError {
    #[error("voxel index {index} out of range (N = {count})")]
    VoxelIndexOutOfRange { index: usize, count: usize },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid sensor layout: {0}")]
    InvalidLayout(String),

    #[error("weight matrix is identically zero: no link intersects any voxel")]
    AllZeroWeights,

    #[error("invalid model parameters: {0}")]
    InvalidModel(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("correlation coefficient must lie in [0, 1), got {0}")]
    InvalidCorrelation(f64),

    #[error("matrix is singular or not positive definite: {context} (rank estimate {rank} of {dim})")]
    SingularSystem {
        context: String,
        rank: usize,
        dim: usize,
    },

    #[error("covariance prior is not positive definite")]
    NonPositiveDefinitePrior,

    #[error("invalid solver configuration: {0}")]
    InvalidSolverConfig(String),

    #[error("projected gradient diverged at iteration {iteration}: step size {mu} too large")]
    PgmDiverged { iteration: usize, mu: f64 },

    #[error("reduced system became singular at iteration {iteration}")]
    ReducedSystemSingular { iteration: usize },

    #[error("brute-force oracle limited to N <= {max}, got N = {n}")]
    OracleTooLarge { n: usize, max: usize },

    #[error("no velocity candidate produced a solution")]
    NoVelocityCandidate,

    #[error("invalid scene primitive: {0}")]
    InvalidPrimitive(String),

    #[error("invalid measurement data: {0}")]
    InvalidMeasurements(String),

    #[error("invalid plan parameters: {0}")]
    InvalidPlan(String),

    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, RtiError>;
