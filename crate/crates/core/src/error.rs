use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("rollout diverged at step {step}")]
    Diverged { step: usize },

    #[error("missing jacobians at step {0}")]
    MissingJacobians(usize),

    #[error("empty batch passed to {0}")]
    EmptyBatch(&'static str),

    #[error("insufficient data: need {need} transitions, have {have}")]
    Insufficient { need: usize, have: usize },

    #[error("{op} is not supported for {env}")]
    Unsupported { op: &'static str, env: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension {
            what,
            expected,
            got,
        })
    }
}
