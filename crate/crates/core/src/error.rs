use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("corrupt snapshot: {0}")]
    Snapshot(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }
}

/// Errors raised while reading UCI bag-of-words files. Line numbers are
/// 1-based and refer to the file being parsed.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("malformed header at line {line}: {reason}")]
    MalformedHeader { line: usize, reason: String },
    #[error("malformed triple at line {line}: {reason}")]
    MalformedTriple { line: usize, reason: String },
    #[error("NNZ mismatch: header declares {expected} triples, found {found}")]
    NnzMismatch { expected: usize, found: usize },
    #[error("docID out of range at line {line}: {id} not in 1..={max}")]
    DocIdOutOfRange { line: usize, id: usize, max: usize },
    #[error("wordID out of range at line {line}: {id} not in 1..={max}")]
    WordIdOutOfRange { line: usize, id: usize, max: usize },
    #[error("count < 1 at line {line}")]
    BadCount { line: usize },
    #[error("vocabulary has {found} lines, docword header declares W = {expected}")]
    VocabSize { expected: usize, found: usize },
    #[error("duplicate vocabulary word {word:?} at line {line}")]
    DuplicateWord { line: usize, word: String },
    #[error("corpus has no tokens")]
    EmptyCorpus,
}
