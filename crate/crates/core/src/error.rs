use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the select-and-refine engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate record id `{0}`")]
    DuplicateId(String),

    #[error("unknown id `{0}`")]
    UnknownId(String),

    #[error("embeddings do not cover {} corpus record(s): {}", .0.len(), preview(.0))]
    CoverageGap(Vec<String>),

    #[error("dimension mismatch for `{id}`: expected {expected}, found {found}")]
    DimensionMismatch {
        id: String,
        expected: usize,
        found: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("scorer `{scorer}` failed on ({query}, {candidate}): {source}")]
    Scoring {
        scorer: String,
        query: String,
        candidate: String,
        #[source]
        source: Box<Error>,
    },

    #[error("protocol error for request {id}: {message}")]
    Protocol { id: i64, message: String },

    #[error("scorer handshake failed: {0}")]
    Handshake(String),

    #[error("request {0} timed out")]
    Timeout(u64),

    #[error("scorer process exited: {0}")]
    ChildExited(String),

    #[error(
        "exhaustive scoring of {records} records needs {calls} scorer calls, above the \
         {cap}-record cap; all-pairs comparison has impractically long computation time \
         at this size (raise the cap to override)"
    )]
    ExhaustiveCap { records: usize, cap: usize, calls: u64 },

    #[error("scorer call budget violated: expected {expected} calls, observed {observed}")]
    BudgetViolation { expected: u64, observed: u64 },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn preview(ids: &[String]) -> String {
    const SHOWN: usize = 10;
    let mut s = ids.iter().take(SHOWN).cloned().collect::<Vec<_>>().join(", ");
    if ids.len() > SHOWN {
        s.push_str(", ...");
    }
    s
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
