use thiserror::Error;

/// Failures raised by a generation backend. Every variant that comes from a
/// live request carries the request id so a failed session can be traced back
/// to the exact invocation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("request {request_id}: transport failure: {message}")]
    Transport { request_id: String, message: String },

    #[error("request {request_id}: timed out after {timeout_ms} ms")]
    Timeout { request_id: String, timeout_ms: u64 },

    #[error("request {request_id}: malformed response: {message}")]
    Malformed { request_id: String, message: String },

    #[error("fixture has no entry for sentence {id:?} at cursor {cursor}")]
    FixtureMiss { id: String, cursor: usize },

    #[error("fixture line {line}: {message}")]
    Fixture { line: usize, message: String },

    #[error("invalid backend configuration: {0}")]
    Config(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("source sentence contains no words")]
    EmptySource,

    #[error("corpus line {line}: {message}")]
    Corpus { line: usize, message: String },

    #[error("invalid prompt template: {0}")]
    Template(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("candidate list is empty")]
    EmptyCandidates,

    #[error("invalid candidate: {0}")]
    InvalidCandidate(String),

    #[error("backend invocation {invocation} failed: {source}")]
    Backend {
        invocation: usize,
        #[source]
        source: BackendError,
    },

    #[error("{0}")]
    BackendSetup(#[from] BackendError),

    #[error("session emitted more than {limit} target tokens")]
    CapExceeded { limit: usize },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("length mismatch: {hypotheses} hypotheses vs {references} references")]
    LengthMismatch {
        hypotheses: usize,
        references: usize,
    },

    #[error("no reference for ids: {}", .0.join(", "))]
    MissingReference(Vec<String>),

    #[error("trace line {line}: {message}")]
    Trace { line: usize, message: String },

    #[error("language pair {pair} has {available} sentences, {required} requested")]
    CorpusTooSmall {
        pair: String,
        available: usize,
        required: usize,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse error classes, used by the CLI to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Io,
    Backend,
    Metric,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io(_) | Error::Json(_) | Error::Corpus { .. } | Error::Trace { .. } => {
                ErrorKind::Io
            }
            Error::Backend { .. } | Error::BackendSetup(_) | Error::CapExceeded { .. } => {
                ErrorKind::Backend
            }
            Error::UndefinedMetric(_)
            | Error::LengthMismatch { .. }
            | Error::MissingReference(_) => ErrorKind::Metric,
            Error::EmptySource
            | Error::Template(_)
            | Error::Config(_)
            | Error::EmptyCandidates
            | Error::InvalidCandidate(_)
            | Error::CorpusTooSmall { .. } => ErrorKind::Usage,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
