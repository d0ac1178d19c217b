use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes are incompatible for the requested operation.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A configuration value is out of range or inconsistent.
    #[error("invalid config: {0}")]
    Config(String),

    /// An operation was called in a way its contract forbids.
    #[error("usage error: {0}")]
    Usage(String),

    /// Training diverged or produced non-finite values.
    #[error("training error: {0}")]
    Training(String),

    /// A sequence does not fit the model context window.
    #[error("context length exceeded: {0}")]
    Length(String),

    /// Persisted data failed validation (magic, hash, payload size).
    #[error("integrity error: {0}")]
    Integrity(String),

    /// A required artifact (e.g. contrastive towers) is not available.
    #[error("capability error: {0}")]
    Capability(String),

    /// A name was not found in a table (taxonomy node, vocab entry, param).
    #[error("lookup error: {0}")]
    Lookup(String),

    /// A statistic is undefined on the given input (e.g. zero variance).
    #[error("undefined result: {0}")]
    Undefined(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
