use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum CrlError {
    /// Shapes do not agree or a structural invariant is broken.
    #[error("structural error: {0}")]
    Structural(String),

    /// A configuration value is outside its admissible range.
    #[error("configuration error: {0}")]
    Config(String),

    /// Data or parameters fall outside a function's mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("nonconvergence: {0}")]
    Nonconvergence(String),

    #[error("unsupported criterion variant: {0}")]
    UnsupportedVariant(String),

    /// Every candidate of a model-selection grid was eliminated.
    #[error("all candidates eliminated")]
    AllEliminated,

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl From<csv::Error> for CrlError {
    fn from(e: csv::Error) -> Self {
        CrlError::Parse(e.to_string())
    }
}

impl From<serde_json::Error> for CrlError {
    fn from(e: serde_json::Error) -> Self {
        CrlError::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CrlError>;
