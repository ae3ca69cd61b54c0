use thiserror::Error;

/// Errors surfaced by constructors, solvers, and the experiment plumbing.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("no unique stationary distribution: {0}")]
    NoStationaryDistribution(String),
    #[error("singular system: {0}")]
    SingularSystem(String),
    #[error("degenerate features: {0}")]
    DegenerateFeatures(String),
    #[error("coverage violation: {0}")]
    CoverageViolation(String),
    #[error("fixed point is not unique: {0}")]
    NonUniqueFixedPoint(String),
    #[error("ground-truth cross-check failed: {0}")]
    GroundTruthMismatch(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("malformed instance file: {0}")]
    InstanceFile(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
