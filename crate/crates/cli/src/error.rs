use std::path::PathBuf;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const VALIDATION: i32 = 2;
    pub const RUNTIME: i32 = 3;
    pub const SYNTAX: i32 = 4;
    pub const UNKNOWN_KEY: i32 = 5;
    pub const CROSS_REFERENCE: i32 = 6;
    pub const KIND_MISMATCH: i32 = 7;
    pub const NOT_CONSERVED: i32 = 10;
    pub const IDENTITY_FAILED: i32 = 11;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{}:{line}:{column}: syntax error: {message}", path.display())]
    Syntax { path: PathBuf, line: usize, column: usize, message: String },
    #[error("{}:{line}:{column}: {message}", path.display())]
    UnknownKey { path: PathBuf, line: usize, column: usize, message: String },
    #[error("invalid reference: {0}")]
    CrossReference(String),
    #[error("kind mismatch: {0}")]
    KindMismatch(String),
    #[error("invalid scenario: {0}")]
    Validation(String),
    #[error("{context}: {source}")]
    Engine { context: String, source: gtot_core::Error },
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Syntax { .. } => exit::SYNTAX,
            CliError::UnknownKey { .. } => exit::UNKNOWN_KEY,
            CliError::CrossReference(_) => exit::CROSS_REFERENCE,
            CliError::KindMismatch(_) => exit::KIND_MISMATCH,
            CliError::Validation(_) => exit::VALIDATION,
            CliError::Engine { source: gtot_core::Error::IdentityMismatch { .. }, .. } => exit::VALIDATION,
            CliError::Engine { .. } | CliError::Io { .. } => exit::RUNTIME,
        }
    }

    pub fn engine(context: impl Into<String>) -> impl FnOnce(gtot_core::Error) -> CliError {
        let context = context.into();
        move |source| CliError::Engine { context, source }
    }

    pub fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
        let context = context.into();
        move |source| CliError::Io { context, source }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
