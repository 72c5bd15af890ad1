use thiserror::Error;

use optomech_core::Error as CoreError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_ASSERTION: i32 = 4;

#[derive(Debug, Clone, Error)]
pub enum RunError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("scenario assertion failed: {}", .0.join("; "))]
    Assertion(Vec<String>),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => EXIT_CONFIG,
            RunError::Numeric(_) => EXIT_NUMERIC,
            RunError::Assertion(_) => EXIT_ASSERTION,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            RunError::Config(_) => "config",
            RunError::Numeric(_) => "numeric",
            RunError::Assertion(_) => "assertion",
        }
    }
}

impl From<CoreError> for RunError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Validation(_)
            | CoreError::Parse { .. }
            | CoreError::Plan(_)
            | CoreError::UnknownMode(_)
            | CoreError::Branch(_)
            | CoreError::OutsidePassband { .. }
            | CoreError::UnreachableGain { .. }
            | CoreError::BandOverlap(_)
            | CoreError::Span { .. }
            | CoreError::Io(_) => RunError::Config(e.to_string()),
            _ => RunError::Numeric(e.to_string()),
        }
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Config(format!("output: {e}"))
    }
}

pub type RunResult<T> = std::result::Result<T, RunError>;
