use crate::fit::FitFailure;

/// Errors raised by the model, synthesis and analysis layers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument or configuration value is outside its allowed domain.
    #[error("{field}: {message}")]
    Domain { field: String, message: String },

    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("fit failed: {0}")]
    Fit(#[from] FitFailure),

    #[error("malformed trace data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn domain(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Domain {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Prefixes the field path of a domain error, e.g. `rates` + `gamma_i_hz`.
    pub fn within(self, section: &str) -> Self {
        match self {
            Error::Domain { field, message } => Error::Domain {
                field: format!("{section}.{field}"),
                message,
            },
            other => other,
        }
    }
}

pub(crate) fn ensure(cond: bool, field: &str, message: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::domain(field, message()))
    }
}
