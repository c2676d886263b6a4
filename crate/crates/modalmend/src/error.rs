use modalmend_core::Error as CoreError;

use crate::format::FormatError;

/// A command failure, classified by process exit code.
#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric divergence: {0}")]
    Diverged(String),
    #[error("{0}")]
    Other(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Data(_) => 3,
            Failure::Diverged(_) => 4,
            Failure::Other(_) => 1,
        }
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        Failure::Other(format!("{}: {e}", path.display()))
    }
}

impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Diverged { .. } | CoreError::NonFinite(_) => Failure::Diverged(e.to_string()),
            CoreError::InvalidConfig(_) => Failure::Config(e.to_string()),
            CoreError::InvalidData(_) | CoreError::DegenerateMetric(_) | CoreError::ShapeMismatch { .. } => Failure::Data(e.to_string()),
            _ => Failure::Other(e.to_string()),
        }
    }
}

impl From<FormatError> for Failure {
    fn from(e: FormatError) -> Self {
        Failure::Data(e.to_string())
    }
}
