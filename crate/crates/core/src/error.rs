use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid micro-kernel spec: {0}")]
    InvalidSpec(String),
    #[error("no feasible tiling: {0}")]
    InfeasibleTiling(String),
    #[error("scheduling failed: {0}")]
    Schedule(String),
    #[error("plan mismatch: {0}")]
    PlanMismatch(String),
    #[error("invalid machine model: {0}")]
    InvalidModel(String),
    #[error("bad matrix file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
