use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("optimization problem is infeasible: {0}")]
    Infeasible(String),
    #[error("beamformer recovery failed: {0}")]
    RecoveryFailed(String),
    #[error("training failed: every training slot was infeasible")]
    TrainingFailed,
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param(msg: impl Into<String>) -> Error {
    Error::Parameter(msg.into())
}
