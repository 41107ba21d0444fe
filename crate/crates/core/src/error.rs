use thiserror::Error;

/// Error taxonomy shared across the crate.
///
/// Shape and numeric violations are hard errors everywhere; nothing in this
/// crate silently broadcasts or clamps a non-finite value.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid build-time configuration (layer sizes, hyperparameters, config files).
    #[error("configuration error: {0}")]
    Config(String),

    /// Mismatched tensor/vector dimensions.
    #[error("shape error: {0}")]
    Shape(String),

    /// Non-finite values where finite ones are required.
    #[error("numerical error: {0}")]
    Numeric(String),

    /// A well-formed value that is out of range for the operation.
    #[error("input error: {0}")]
    Input(String),

    /// Operation not valid in the current state (e.g. sampling an empty buffer).
    #[error("state error: {0}")]
    State(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Exit code used by the CLI: config problems exit 2, runtime failures exit 1.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            _ => 1,
        }
    }
}
