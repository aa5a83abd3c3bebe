use thiserror::Error;

use crate::latent::LatentDims;

pub type Result<T, E = MevgError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum MevgError {
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch {
        expected: LatentDims,
        actual: LatentDims,
    },

    #[error("noise level {level} out of range (schedule has {max} levels above clean)")]
    LevelOutOfRange { level: usize, max: usize },

    #[error("timestep {timestep} out of range for a {train_steps}-step schedule")]
    TimestepOutOfRange { timestep: usize, train_steps: usize },

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("invalid guidance configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid latent: {0}")]
    InvalidLatent(String),

    #[error("stochastic step (sigma = {sigma}) requires a noise latent")]
    MissingNoise { sigma: f64 },

    #[error("no registered mean for condition `{0}`")]
    UnknownCondition(String),

    #[error("denoised trace has no entry for timestep {0}")]
    MissingTraceEntry(usize),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("latent file: {0}")]
    LatentFormat(String),

    #[error("bridge protocol: {0}")]
    Protocol(String),

    #[error("bridge server error (request {request_id}): {message}")]
    Remote { request_id: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
