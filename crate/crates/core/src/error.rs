use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("index {index} out of range for {what} of size {len}")]
    Index {
        what: &'static str,
        index: usize,
        len: usize,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("empty sentence")]
    EmptySentence,
    #[error("lattice too large for enumeration: {paths} paths (limit {limit})")]
    OracleSize { paths: f64, limit: usize },
    #[error("data error: {0}")]
    Data(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("vocabulary error: {0}")]
    Vocab(String),
    #[error("alignment error in sentence {sentence}: {msg}")]
    Alignment { sentence: usize, msg: String },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite value in sentence {sentence}: {value}")]
    Numeric { sentence: usize, value: f64 },
    #[error("check failed: {0}")]
    Check(String),
    #[error("model format error: {0}")]
    Format(String),
    #[error("model file corrupted: {0}")]
    Corruption(String),
    #[error("generation error: {0}")]
    Generation(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Process exit code for this error class: 1 usage, 2 data/format, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Config(_) => 1,
            Error::Numeric { .. } | Error::Check(_) => 3,
            _ => 2,
        }
    }
}
