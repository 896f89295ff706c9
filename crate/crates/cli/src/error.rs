use std::fmt;
use std::path::Path;

/// Exit status for a completed run.
pub const EXIT_OK: i32 = 0;
/// A trial or grid point was flagged invalid, or a check failed.
pub const EXIT_INVALID: i32 = 1;
/// Bad flags, bad configuration or an unusable output directory.
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Config(sparc_core::Error),
    Io { path: String, message: String },
    Invalid(String),
}

impl CliError {
    pub fn io(path: &Path, e: impl fmt::Display) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }

    pub fn csv(path: &Path, e: csv::Error) -> Self {
        Self::io(path, e)
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) | CliError::Io { .. } => EXIT_USAGE,
            CliError::Invalid(_) => EXIT_INVALID,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Config(e) => write!(f, "config: {e}"),
            CliError::Io { path, message } => write!(f, "{path}: {message}"),
            CliError::Invalid(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for CliError {}

/// Configuration problems map to usage errors; anything that goes wrong
/// inside a simulation is an invalid experiment.
impl From<sparc_core::Error> for CliError {
    fn from(e: sparc_core::Error) -> Self {
        use sparc_core::Error as E;
        match e {
            E::Invariant { .. } | E::ConfigIo { .. } | E::ConfigParse(_) | E::ConfigSerialize(_) => {
                CliError::Config(e)
            }
            other => CliError::Invalid(other.to_string()),
        }
    }
}
