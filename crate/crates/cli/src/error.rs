use mevg_core::MevgError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("predictor error: {0}")]
    Predictor(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("generation failed: {0}")]
    Generation(MevgError),
}

impl CliError {
    /// Process exit status for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 3,
            CliError::Predictor(_) => 4,
            CliError::Io(_) => 5,
            CliError::Generation(_) => 6,
        }
    }
}

impl From<MevgError> for CliError {
    fn from(e: MevgError) -> Self {
        match e {
            MevgError::Io(io) => CliError::Io(io),
            MevgError::Protocol(_) | MevgError::Remote { .. } => CliError::Predictor(e.to_string()),
            other => CliError::Generation(other),
        }
    }
}
