use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error at row {row}: {message}")]
    Csv { row: u64, message: String },

    #[error("empty relation: {0}")]
    EmptyRelation(String),

    #[error("invalid query: {0}")]
    InvalidQuery(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("unsupported model file version {found} (this build reads version {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("attribute constraints contain a cycle")]
    CyclicConstraints,

    #[error("assignment is not a prefix of the model ordering: {0}; use a range estimator instead")]
    NonPrefixAssignment(String),

    #[error("enumeration of {cells} cells exceeds the cap of {cap}; use a sampling estimator")]
    EnumerationCapExceeded { cells: u128, cap: u64 },

    #[error("unknown value {value:?} for attribute {attribute:?}")]
    UnknownValue { attribute: String, value: String },
}

pub type Result<T> = std::result::Result<T, Error>;
