use std::fmt;

/// Stable, machine-parsable error classes printed as `E_<CODE>: message`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCode {
    Arg,
    Path,
    Config,
    Template,
    Dataset,
    NoIndex,
    Backend,
    Io,
    Distill,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::Arg => "E_ARG",
            ErrorCode::Path => "E_PATH",
            ErrorCode::Config => "E_CONFIG",
            ErrorCode::Template => "E_TEMPLATE",
            ErrorCode::Dataset => "E_DATASET",
            ErrorCode::NoIndex => "E_NOINDEX",
            ErrorCode::Backend => "E_BACKEND",
            ErrorCode::Io => "E_IO",
            ErrorCode::Distill => "E_DISTILL",
        }
    }

    /// Usage and input problems exit 2, runtime failures exit 1.
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCode::Backend | ErrorCode::Io | ErrorCode::Distill => 1,
            _ => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: ErrorCode,
    pub message: String,
}

impl CliError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        CliError {
            code,
            message: message.into(),
        }
    }

    /// The single stderr line: newlines in the message are flattened.
    pub fn line(&self) -> String {
        let msg: Vec<&str> = self.message.split_whitespace().collect();
        format!("{}: {}", self.code.as_str(), msg.join(" "))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.line())
    }
}

impl std::error::Error for CliError {}

pub type CliResult<T> = Result<T, CliError>;

pub(crate) fn io_err(context: impl fmt::Display, e: std::io::Error) -> CliError {
    CliError::new(ErrorCode::Io, format!("{context}: {e}"))
}
