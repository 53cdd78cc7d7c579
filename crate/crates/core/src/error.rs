//! Error type shared by every module of the crate.

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown stage-of-development code {0}")]
    UnknownSodCode(i64),
    #[error("invalid concentration code {0}: expected two ascending decimal digits")]
    InvalidConcentrationCode(i64),
    #[error("polygon carries neither a stage of development nor the ice-free flag")]
    MissingSod,
    #[error("stage of development {0} has no partial concentration code")]
    MissingConcentration(i64),
    #[error("inconsistent egg code: {0}")]
    InconsistentEgg(String),

    #[error("class {0} has no samples")]
    EmptyClass(usize),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("invalid loss configuration: {0}")]
    InvalidLossConfig(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("forward cache does not match gradient: {0}")]
    StaleCache(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid training configuration: {0}")]
    InvalidTrainConfig(String),

    #[error("class index {index} out of range for {classes} classes")]
    IndexOutOfRange { index: usize, classes: usize },
    #[error("confusion matrix is empty")]
    EmptyMatrix,

    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("raster has {0} channels, expected 3")]
    ChannelCount(usize),
    #[error("invalid split ratios: {0}")]
    InvalidRatios(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
