use cab_core::CabError;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_FILE: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;
pub const EXIT_OTHER: i32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("file error: {0}")]
    File(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => EXIT_USAGE,
            Self::File(_) => EXIT_FILE,
            Self::Numeric(_) => EXIT_NUMERIC,
            Self::Other(_) => EXIT_OTHER,
        }
    }
}

impl From<CabError> for CliError {
    fn from(e: CabError) -> Self {
        match e {
            CabError::Io(_) | CabError::Parse { .. } => Self::File(e.to_string()),
            CabError::NonFinite(_) => Self::Numeric(e.to_string()),
            CabError::Config(_) | CabError::Param(_) => Self::Usage(e.to_string()),
            _ => Self::Other(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::File(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
