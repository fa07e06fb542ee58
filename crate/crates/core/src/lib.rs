//! Simultaneous translation on top of completion-style generation backends.
//!
//! A source sentence is revealed word by word. A wait-k/read-n gate decides
//! when the backend is consulted; each consultation asks for `B` scored
//! continuations of the prompt built from the revealed source and the target
//! committed so far, and the relaxed-agreement prefix of those continuations
//! is committed. Committed output is never revised.
//!
//! The crate also carries the evaluation side (corpus BLEU, LAAL) and a
//! generator for prefix-to-prefix fine-tuning data.

pub mod agreement;
pub mod backend;
pub mod datagen;
pub mod error;
pub mod metrics;
pub mod policy;
pub mod prompt;
pub mod text;

pub use agreement::{lcp, ralcp, ralcp_votes, AgreementConfig, BeamCandidate};
pub use backend::{Backend, GenerationRequest, GenerationResponse, RemoteBackend, ScriptedBackend};
pub use error::{BackendError, Error, ErrorKind, Result};
pub use metrics::{corpus_bleu, laal, report, BleuScore, DelayProfile, MetricsReport};
pub use policy::{
    decide, parse_traces, run_session, should_attempt_write, traces_to_jsonl, Action, PolicyConfig,
    SessionTrace, WriteMode,
};
pub use prompt::{build_prompt, IncrementalState, PromptTemplate};
pub use text::{
    detokenize, tokenize_source, JoiningConvention, SourceStream, SourceWord, TargetToken,
};
