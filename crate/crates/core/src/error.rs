use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Validation(String),

    #[error("alignment failed: {0}")]
    Alignment(String),

    /// Two consecutive lights whose diffuse weights are too close for the
    /// frame difference to be divided through. The challenge must be re-issued.
    #[error("degenerate light pair at index {index}: max |Δk| = {max_delta:.3e}")]
    DegeneratePair { index: usize, max_delta: f64 },

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}
