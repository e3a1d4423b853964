use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: expected {expected} elements, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },

    #[error("class id {class_id} out of range (num_classes = {num_classes})")]
    UnknownClass { class_id: usize, num_classes: usize },

    #[error("scene infeasible: placed {placed} of {requested} boxes before hitting the retry cap")]
    InfeasibleScene { placed: usize, requested: usize },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("bad magic: expected \"BTFY\", found {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported field file version {0}")]
    UnsupportedVersion(u16),

    #[error("truncated stream while reading {0}")]
    Truncated(&'static str),

    #[error("malformed field file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
