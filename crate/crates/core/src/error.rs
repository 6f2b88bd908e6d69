use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CabError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("series length {0} is too short (need at least 2 time steps)")]
    DegenerateLength(usize),

    #[error("inconsistent configuration: {0}")]
    Config(String),

    #[error("degenerate task: {0}")]
    DegenerateTask(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for CabError {
    fn from(e: std::io::Error) -> Self {
        CabError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CabError>;
