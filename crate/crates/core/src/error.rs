use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Structural problem with an input file (missing column, bad header).
    #[error("{0}")]
    Format(String),

    #[error("line {line}: {message}")]
    Row { line: u64, message: String },

    /// Duplicate keys or inconsistent cross references.
    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("degenerate contingency table: a row or column total is zero")]
    DegenerateTable,

    #[error("schema error: {0}")]
    Schema(String),

    #[error("invalid parameter `{name}`: {message}")]
    InvalidParam { name: String, message: String },

    #[error("not found: {0}")]
    NotFound(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid_param(name: &str, message: impl Into<String>) -> Self {
        Error::InvalidParam {
            name: name.to_string(),
            message: message.into(),
        }
    }

    /// True when the failure came from the filesystem rather than from the
    /// content of an input.
    pub fn is_io(&self) -> bool {
        match self {
            Error::Io(_) => true,
            Error::Csv(e) => matches!(e.kind(), csv::ErrorKind::Io(_)),
            Error::Json(e) => e.is_io(),
            _ => false,
        }
    }
}
