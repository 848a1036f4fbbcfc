use std::fmt;

/// Exit status: 2 for configuration or input problems, 3 for numerical failure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError { code: EXIT_CONFIG, message: message.into() }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        CliError { code: EXIT_NUMERICAL, message: message.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<sparsepower::Error> for CliError {
    fn from(e: sparsepower::Error) -> Self {
        if e.is_input_error() {
            CliError::config(e.to_string())
        } else {
            CliError::numerical(e.to_string())
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
