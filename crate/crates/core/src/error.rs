use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    DimensionMismatch {
        expected: usize,
        actual: usize,
        context: &'static str,
    },
    #[error("empty dataset passed to {0}")]
    EmptyData(&'static str),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("non-finite loss at SGD iteration {iteration}")]
    NonFinite { iteration: usize },
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("stream too short: need index {needed}, stream has {available} examples")]
    StreamExhausted { needed: usize, available: usize },
    #[error("unknown model id {0}")]
    UnknownModel(u64),
    #[error("idx format error at byte offset {offset}: {reason}")]
    Idx { offset: usize, reason: String },
    #[error("csv error at row {row}: {reason}")]
    Csv { row: usize, reason: String },
    #[error("malformed record at line {line}: {reason}")]
    Trace { line: usize, reason: String },
    #[error("missing theory parameter `{0}`")]
    MissingTheoryParam(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
