use std::fmt;

/// Exit 1 for usage, configuration and I/O problems, 2 for numerical failures.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "error: {m}"),
            CliError::Numerical(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<se2inv::Error> for CliError {
    fn from(e: se2inv::Error) -> Self {
        use se2inv::Error::*;
        match e {
            Numerical(_) | DesignValidation { .. } | NoPreimage(_) => CliError::Numerical(e.to_string()),
            InvalidParameter(_) | DimensionMismatch(_) | Parse(_) | Io(_) => CliError::Usage(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Usage(e.to_string())
    }
}
