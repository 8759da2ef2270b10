use std::path::Path;

use unmix_core::UnmixError;

/// Exit status for usage and input errors.
pub const EXIT_USAGE: i32 = 1;
/// Exit status for numerical failures inside the solvers.
pub const EXIT_NUMERICAL: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: field `{field}`: {message}")]
    Format { path: String, field: String, message: String },
    #[error(transparent)]
    Unmix(#[from] UnmixError),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), source }
    }

    pub fn format(path: &Path, field: &str, message: impl Into<String>) -> Self {
        CliError::Format { path: path.display().to_string(), field: field.into(), message: message.into() }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Unmix(
                UnmixError::Numerical(_)
                | UnmixError::NearOrthogonal(_)
                | UnmixError::ZeroNorm
                | UnmixError::Extraction(_),
            ) => EXIT_NUMERICAL,
            _ => EXIT_USAGE,
        }
    }
}
