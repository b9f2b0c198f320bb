use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("innovation covariance is not positive definite")]
    SingularInnovation,

    #[error("covariance is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("true trajectory {0} has zero energy; NMSE is undefined")]
    ZeroEnergy(usize),

    #[error("trajectory {0} has zero signal variance; SMNR is undefined")]
    ZeroSignalVariance(usize),

    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("bundle carries no state trajectories")]
    MissingStates,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("{}: {source}", path.display())]
    File { path: std::path::PathBuf, source: std::io::Error },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
