use thiserror::Error;

/// Errors raised across the library. Each variant maps to a stable
/// machine-readable code via [`Error::code`].
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("singularity at the origin: {0}")]
    Singularity(String),

    #[error("invalid rho profile: non-positive value {value} at grid index {index} (r = {r})")]
    NonPositiveRho { index: usize, r: f64, value: f64 },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical failure: {message} (achieved residual {residual:.3e})")]
    Numeric { message: String, residual: f64 },

    #[error("refused: {0}")]
    Refused(String),

    #[error("bound fit failed: {0}")]
    BoundFit(String),

    #[error("simulation aborted at step {step}: {message}")]
    Simulation { step: usize, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Singularity(_) => "singularity",
            Error::NonPositiveRho { .. } => "rho_non_positive",
            Error::Validation(_) => "validation",
            Error::Config(_) => "config",
            Error::Numeric { .. } => "numeric",
            Error::Refused(_) => "refused",
            Error::BoundFit(_) => "bound_fit",
            Error::Simulation { .. } => "simulation",
            Error::Io(_) => "io",
        }
    }

    pub(crate) fn numeric(message: impl Into<String>, residual: f64) -> Self {
        Error::Numeric {
            message: message.into(),
            residual,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
