use thiserror::Error;

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("embedding dimension mismatch: store expects {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("store consistency violation: {0}")]
    StoreConsistency(String),

    #[error("extraction output could not be parsed: {reason}\nraw output:\n{raw}")]
    ExtractionFormat { reason: String, raw: String },

    #[error("provider unavailable after {attempts} attempt(s): {reason}")]
    Unavailable { attempts: u32, reason: String },

    #[error("provider protocol error: {0}")]
    Protocol(String),

    #[error("snapshot save failed: {0}")]
    Save(String),

    #[error("snapshot is corrupt: {0}")]
    CorruptSnapshot(String),

    #[error("snapshot schema version {found} needs migration (supported: {supported})")]
    MigrationRequired { found: u32, supported: u32 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, MemoryError>;
