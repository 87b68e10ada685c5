use std::path::PathBuf;

use thiserror::Error;

use crate::gateway::BackendKind;
use crate::store::Stage;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure reported by a single backend attempt.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum BackendError {
    #[error("timed out")]
    Timeout,
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("transient failure: {0}")]
    Transient(String),
    #[error("backend failed: {0}")]
    Failed(String),
    #[error("backend unavailable: {0}")]
    Unavailable(String),
}

impl BackendError {
    /// Whether another attempt may succeed.
    pub fn is_transient(&self) -> bool {
        matches!(self, Self::Timeout | Self::Transient(_))
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid request: {0}")]
    InvalidRequest(String),

    #[error("text backend returned an empty story")]
    EmptyStory,

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("{kind} backend failed for request {request_hash} after {attempts} attempt(s): {source}")]
    Backend {
        kind: BackendKind,
        request_hash: String,
        attempts: u32,
        #[source]
        source: BackendError,
    },

    #[error("corrupt asset {}: {reason}", path.display())]
    CorruptAsset { path: PathBuf, reason: String },

    #[error("invalid selection: {0}")]
    InvalidSelection(String),

    #[error("stage `{stage}` requires stage `{missing}` to be done first")]
    Dependency { stage: Stage, missing: Stage },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },

    #[error("render tool failed: {command}\n{diagnostics}")]
    Tool { command: String, diagnostics: String },

    #[error("layout error: {0}")]
    Layout(String),

    #[error("project error: {0}")]
    Project(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn in_stage(self, stage: Stage) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e @ Error::Dependency { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// Innermost error, looking through stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }

    /// Process exit code: 2 usage, 3 backend, 4 contract, 5 render tool, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::Config(_) | Error::InvalidRequest(_) => 2,
            Error::Backend { .. } | Error::EmptyStory => 3,
            Error::Contract(_)
            | Error::Dependency { .. }
            | Error::InvalidSelection(_)
            | Error::Layout(_)
            | Error::CorruptAsset { .. } => 4,
            Error::Tool { .. } => 5,
            _ => 1,
        }
    }
}
