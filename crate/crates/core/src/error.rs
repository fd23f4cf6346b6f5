use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid rotation matrix: orthonormality error {orth_err:.3e}, det {det:.9}")]
    InvalidRotation { orth_err: f64, det: f64 },

    #[error("rotation axis must be unit length, got norm {0}")]
    NonUnitAxis(f64),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("sequence too short: {len} frames, need at least {min}")]
    SequenceTooShort { len: usize, min: usize },

    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::ShapeMismatch {
            op,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}
