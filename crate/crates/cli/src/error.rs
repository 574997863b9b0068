use serde::Serialize;

/// Command failures. Validation problems exit with 1, everything that goes
/// wrong after the inputs were accepted exits with 2.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("{field}: {message}")]
    Invalid { field: String, message: String },

    #[error("{path}: {message}")]
    Input { path: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("fit failed for {label}: {message}")]
    Fit { label: String, message: String },

    #[error("{0} file(s) do not match the manifest")]
    Tampered(usize),

    #[error(transparent)]
    Model(#[from] erspec::Error),
}

/// Machine-readable form of a [`CliError`], stored in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct ErrorRecord {
    pub kind: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub column: Option<usize>,
}

impl CliError {
    pub fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Invalid {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// A user-supplied file that cannot be read; counts as bad input.
    pub fn unreadable(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Input {
            path: path.display().to_string(),
            message: source.to_string(),
        }
    }

    /// A model-layer domain error raised while checking inputs.
    pub fn from_validation(e: erspec::Error) -> Self {
        match e {
            erspec::Error::Domain { field, message } => CliError::Invalid { field, message },
            other => CliError::Model(other),
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Parse { .. } | CliError::Invalid { .. } | CliError::Input { .. } => 1,
            _ => 2,
        }
    }

    pub fn record(&self) -> ErrorRecord {
        let mut r = ErrorRecord {
            kind: String::new(),
            message: self.to_string(),
            field: None,
            path: None,
            line: None,
            column: None,
        };
        match self {
            CliError::Parse { path, line, column, message } => {
                r.kind = "parse".into();
                r.message = message.clone();
                r.path = Some(path.clone());
                r.line = Some(*line);
                r.column = Some(*column);
            }
            CliError::Invalid { field, message } => {
                r.kind = "validation".into();
                r.message = message.clone();
                r.field = Some(field.clone());
            }
            CliError::Input { path, message } => {
                r.kind = "input".into();
                r.message = message.clone();
                r.path = Some(path.clone());
            }
            CliError::Io { path, .. } => {
                r.kind = "io".into();
                r.path = Some(path.clone());
            }
            CliError::Fit { label, message } => {
                r.kind = "fit".into();
                r.message = message.clone();
                r.field = Some(label.clone());
            }
            CliError::Tampered(_) => r.kind = "integrity".into(),
            CliError::Model(erspec::Error::Fit(_)) => r.kind = "fit".into(),
            CliError::Model(_) => r.kind = "runtime".into(),
        }
        r
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
