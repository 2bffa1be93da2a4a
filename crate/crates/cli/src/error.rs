use std::fmt;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Validation { path: String, message: String },
    Io(String),
    /// `verify` found failing rows.
    Criterion(Vec<String>),
    Diverged(String),
    Runtime(memwave::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Validation { .. } | CliError::Io(_) | CliError::Runtime(_) => 1,
            CliError::Criterion(_) => 2,
            CliError::Diverged(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Validation { path, message } => write!(f, "invalid configuration at {path}: {message}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Criterion(rows) => write!(f, "failing criteria: {}", rows.join("; ")),
            CliError::Diverged(m) => write!(f, "simulation diverged: {m}"),
            CliError::Runtime(e) => write!(f, "{e}"),
        }
    }
}

impl From<memwave::Error> for CliError {
    fn from(e: memwave::Error) -> Self {
        match e {
            memwave::Error::Diverged { .. } | memwave::Error::UnstableStep { .. } => CliError::Diverged(e.to_string()),
            memwave::Error::InvalidParameter { name, reason } => CliError::Validation {
                path: name.to_string(),
                message: reason,
            },
            other => CliError::Runtime(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
