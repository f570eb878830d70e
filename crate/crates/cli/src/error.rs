use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid `{field}`: {message}")]
    Config { field: String, message: String },

    #[error(transparent)]
    Run(#[from] sgld_core::Error),

    #[error("cannot write output: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Process exit code: 2 for configuration errors, 3 for numeric failures
    /// or divergence, 1 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Run(sgld_core::Error::Contract(_) | sgld_core::Error::Parse(_)) => 2,
            CliError::Run(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.into())
    }
}
