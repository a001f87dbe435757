use thiserror::Error;

/// Errors produced anywhere in the simulator.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid matmul plan: {0}")]
    Plan(String),

    #[error("ciphertext context mismatch: {0}")]
    Context(String),

    #[error("access violation: {0}")]
    AccessViolation(String),

    #[error("fixed-point codec overflow: value {value} exceeds bound {bound}")]
    CodecOverflow { value: f64, bound: f64 },

    #[error("invalid field parameters: {0}")]
    Field(String),

    #[error("beaver triple supply exhausted: needed {needed} multiplications, {remaining} remaining")]
    TripleExhausted { needed: u64, remaining: u64 },

    #[error("utility table incomplete: missing subset {0:?}")]
    IncompleteTable(Vec<usize>),

    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),

    #[error("assignment policy violated: {0}")]
    Policy(String),

    #[error("training diverged: {0}")]
    Training(String),

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("protocol message error: {0}")]
    Message(String),

    #[error("io: {0}")]
    Io(String),

    #[error("parse: {0}")]
    Parse(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
