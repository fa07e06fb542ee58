//! Generation backends: anything that maps a prompt to `B` scored
//! continuations of it.

mod remote;
mod scripted;

use std::time::Duration;

pub use remote::{
    RemoteBackend, RemoteConfig, WireCandidate, WireDialect, WireRequest, WireResponse,
};
pub use scripted::{FixtureCandidate, FixtureEntry, ScriptedBackend};

pub use crate::text::JoiningConvention;

use crate::agreement::BeamCandidate;
use crate::error::BackendError;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

/// Where a request comes from. Remote backends only use it to name requests
/// in errors; the scripted backend uses it as its lookup key.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RequestTag {
    pub sentence_id: String,
    pub cursor: usize,
    /// Number of target tokens committed before this request.
    pub committed: usize,
    pub invocation: usize,
}

impl RequestTag {
    pub fn request_id(&self) -> String {
        format!("{}#{}", self.sentence_id, self.invocation)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    pub prompt: String,
    pub num_candidates: usize,
    pub max_new_tokens: usize,
    pub stop_sequences: Vec<String>,
    pub tag: RequestTag,
}

impl GenerationRequest {
    pub fn new(prompt: impl Into<String>, num_candidates: usize, max_new_tokens: usize) -> Self {
        Self {
            prompt: prompt.into(),
            num_candidates,
            max_new_tokens,
            stop_sequences: Vec::new(),
            tag: RequestTag::default(),
        }
    }

    pub fn with_tag(mut self, tag: RequestTag) -> Self {
        self.tag = tag;
        self
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.num_candidates == 0 || self.max_new_tokens == 0 {
            return Err(BackendError::Config(
                "num_candidates and max_new_tokens must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Continuations only: candidate tokens never repeat the prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationResponse {
    /// Sorted by descending score.
    pub candidates: Vec<BeamCandidate>,
    pub model_id: String,
    pub latency_ms: u64,
}

pub trait Backend: Send + Sync {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError>;

    /// How this backend's pieces join into surface text.
    fn joining(&self) -> &JoiningConvention;
}

impl<B: Backend + ?Sized> Backend for &B {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        (**self).generate(request)
    }

    fn joining(&self) -> &JoiningConvention {
        (**self).joining()
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        (**self).generate(request)
    }

    fn joining(&self) -> &JoiningConvention {
        (**self).joining()
    }
}

/// Stable sort by descending score.
pub(crate) fn sort_by_score(candidates: &mut [BeamCandidate]) {
    candidates.sort_by(|a, b| b.score.total_cmp(&a.score));
}
