use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report.
///
/// Variants are grouped by the exit code the CLI maps them to, see
/// [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    // usage / argument validation
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    // numeric failures
    #[error("requested {requested} components but the data has numeric rank {rank}")]
    RankDeficient { requested: usize, rank: usize },
    #[error("training loss became non-finite at epoch {epoch}")]
    DivergedLoss { epoch: usize },

    // data / format errors
    #[error("zero-norm vector{}", fmt_id(.id))]
    ZeroVector { id: Option<String> },
    #[error("non-finite value{}", fmt_id(.id))]
    NonFinite { id: Option<String> },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("descriptor set must contain at least one row")]
    EmptySet,
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: Vec<u8> },
    #[error("size mismatch: header implies {expected} bytes, file has {actual}")]
    SizeMismatch { expected: u64, actual: u64 },
    #[error("id count mismatch: header says {expected} rows, ids file has {actual} lines")]
    IdCountMismatch { expected: usize, actual: usize },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("query {query:?}: id {id:?} appears in more than one relevance tier")]
    Overlap { query: String, id: String },
    #[error("self-loop on line {line}")]
    SelfLoop { line: usize },
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("need at least {required} samples, got {n}")]
    TooFewSamples { n: usize, required: usize },
    #[error("pair set is empty")]
    EmptyPairs,
    #[error("id {0:?} cannot be resolved")]
    UnresolvableId(String),
    #[error("requested {requested} cross-class pairs but only {available} exist")]
    InsufficientDiversity { requested: usize, available: usize },
    #[error("query {query:?} has no positives")]
    NoPositives { query: String },
    #[error("no ground truth for query {query:?}")]
    MissingGt { query: String },
    #[error("group {group:?} has a single member")]
    SingletonGroup { group: String },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("pipeline step exited with code {0}")]
    StepFailed(i32),
}

fn fmt_id(id: &Option<String>) -> String {
    match id {
        Some(id) => format!(" (id {id:?})"),
        None => String::new(),
    }
}

impl Error {
    /// Process exit code: 1 usage, 2 data or format, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) => 1,
            Error::RankDeficient { .. } | Error::DivergedLoss { .. } => 3,
            Error::StepFailed(code) => *code,
            _ => 2,
        }
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }
}
