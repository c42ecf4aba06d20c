use serde::Serialize;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("unknown catalog entry '{0}'")]
    UnknownName(String),
    #[error("missing required parameter '{0}'")]
    MissingParameter(String),
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("step {step} failed: {reason}")]
    StepFailure { step: usize, reason: String },
    #[error("no convergence: {0}")]
    NoConvergence(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Machine-readable form written by the command line front end.
#[derive(Debug, Serialize)]
pub struct ErrorReport {
    pub error: &'static str,
    pub message: String,
}

impl Error {
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::Domain(_) => "domain",
            Error::UnknownName(_) => "unknown_name",
            Error::MissingParameter(_) => "missing_parameter",
            Error::Singular(_) => "singular",
            Error::StepFailure { .. } => "step_failure",
            Error::NoConvergence(_) => "no_convergence",
            Error::Parse(_) => "parse",
            Error::Io(_) => "io",
        }
    }

    pub fn report(&self) -> ErrorReport {
        ErrorReport {
            error: self.kind(),
            message: self.to_string(),
        }
    }
}
