use std::fmt;
use std::path::PathBuf;

use serde::Serialize;

/// Any failure a subcommand can report. Printed to stderr as
/// `{"code": ..., "message": ...}` with exit status 1.
#[derive(Debug)]
pub enum CliError {
    Core(fsl_core::Error),
    Service(fsl_service::ServiceError),
    Exists(PathBuf),
    Missing { what: &'static str, path: PathBuf },
    Usage(String),
    Io(std::io::Error),
}

#[derive(Serialize)]
pub struct ErrorReport<'a> {
    pub code: &'a str,
    pub message: String,
}

impl CliError {
    pub fn code(&self) -> String {
        match self {
            CliError::Core(e) => e.code().into(),
            CliError::Service(e) => e.code(),
            CliError::Exists(_) => "artifact_exists".into(),
            CliError::Missing { .. } => "missing_artifact".into(),
            CliError::Usage(_) => "invalid_argument".into(),
            CliError::Io(_) => "io".into(),
        }
    }

    pub fn report(&self) -> String {
        let code = self.code();
        let r = ErrorReport { code: &code, message: self.to_string() };
        serde_json::to_string(&r).unwrap_or_else(|_| format!("{{\"code\":\"{code}\"}}"))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Service(e) => write!(f, "{e}"),
            CliError::Exists(p) => write!(f, "{} already exists; pass --force to replace it", p.display()),
            CliError::Missing { what, path } => {
                write!(f, "{what} not found at {}; run the earlier stage first", path.display())
            }
            CliError::Usage(m) => f.write_str(m),
            CliError::Io(e) => write!(f, "{e}"),
        }
    }
}

impl From<fsl_core::Error> for CliError {
    fn from(e: fsl_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<fsl_service::ServiceError> for CliError {
    fn from(e: fsl_service::ServiceError) -> Self {
        CliError::Service(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
