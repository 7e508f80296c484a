use thiserror::Error;

/// Position of a syntax problem; line and column are 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{line}:{col}: {msg}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub msg: String,
}

impl ParseError {
    pub fn new(line: usize, col: usize, msg: impl Into<String>) -> Self {
        ParseError {
            line,
            col,
            msg: msg.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("parse error in {source_name} at {err}")]
    Parse { source_name: String, err: ParseError },
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("unknown experiment '{0}'")]
    UnknownExperiment(String),
    #[error(transparent)]
    Model(#[from] spinshot::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub const EXIT_PARSE: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use spinshot::Error as E;
        match self {
            CliError::Parse { .. } => EXIT_PARSE,
            CliError::Validation(_) | CliError::UnknownExperiment(_) | CliError::Io(_) => EXIT_VALIDATION,
            CliError::Model(E::Domain(_) | E::InsufficientData(_)) => EXIT_VALIDATION,
            CliError::Model(_) => EXIT_NUMERIC,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
