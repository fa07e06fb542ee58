//! The mixture READ/WRITE policy and the session controller driving it.
//!
//! Reading is gated wait-k/read-n style: nothing is written during the first
//! `k` source words, and afterwards a write is only attempted every `n`-th
//! word. On an attempt the backend is asked for `B` continuations; while the
//! source is still arriving the relaxed-agreement prefix is committed, and
//! once it is complete the best-scoring continuation is committed whole.

use serde::{Deserialize, Serialize};

use crate::agreement::{ralcp_votes, validate_gamma, AgreementConfig, BeamCandidate};
use crate::backend::{Backend, GenerationRequest, RequestTag};
use crate::error::{Error, Result};
use crate::prompt::{build_prompt, IncrementalState, PromptTemplate};
use crate::text::{detokenize, tokenize_source, JoiningConvention, SourceStream, TargetToken};

pub const DEFAULT_MAX_NEW_TOKENS: usize = 64;

/// What happens after a successful write while the source is unfinished.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum WriteMode {
    /// One write attempt per eligible step; the next action is a READ.
    #[default]
    ForcedRead,
    /// Keep consulting the policy at the same step until it answers READ.
    UntilEmpty,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub k: usize,
    pub n: usize,
    pub beam: usize,
    pub gamma: f64,
    pub max_new_tokens: usize,
    /// Session emission cap; `None` means `4 * source words + 32`.
    pub max_target_tokens: Option<usize>,
    #[serde(default)]
    pub write_mode: WriteMode,
    #[serde(default = "yes")]
    pub filter_disagreeing: bool,
}

fn yes() -> bool {
    true
}

impl PolicyConfig {
    pub fn new(k: usize, n: usize, beam: usize, gamma: f64) -> Result<Self> {
        let cfg = Self {
            k,
            n,
            beam,
            gamma,
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
            max_target_tokens: None,
            write_mode: WriteMode::ForcedRead,
            filter_disagreeing: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// b=5, k=3, n=3, γ=0.6.
    pub fn low_latency() -> Self {
        Self::new(3, 3, 5, 0.6).expect("preset is valid")
    }

    /// b=10, k=6, n=6, γ=0.6.
    pub fn high_quality() -> Self {
        Self::new(6, 6, 10, 0.6).expect("preset is valid")
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("n must be at least 1".into()));
        }
        if self.beam == 0 {
            return Err(Error::Config("beam must be at least 1".into()));
        }
        if self.max_new_tokens == 0 {
            return Err(Error::Config("max_new_tokens must be at least 1".into()));
        }
        if self.max_target_tokens == Some(0) {
            return Err(Error::Config("max_target_tokens must be at least 1".into()));
        }
        validate_gamma(self.gamma)
    }

    pub fn target_cap(&self, source_words: usize) -> usize {
        self.max_target_tokens.unwrap_or(4 * source_words + 32)
    }

    fn agreement(&self) -> AgreementConfig {
        AgreementConfig {
            gamma: self.gamma,
            strip_eos: true,
            filter_disagreeing: self.filter_disagreeing,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Read,
    Write(Vec<TargetToken>),
    Finish,
}

/// Whether a write may be attempted at step `t` (`t` = revealed source words).
pub fn should_attempt_write(t: usize, k: usize, n: usize, source_finished: bool) -> bool {
    source_finished || (t > k && t.is_multiple_of(n))
}

/// An action plus whether the backend was consulted to reach it.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub action: Action,
    pub invoked: bool,
}

/// One policy step. `tag` identifies the request to the backend; its cursor
/// and committed fields are filled in from `state`.
pub fn decide<B: Backend + ?Sized>(
    state: &IncrementalState,
    config: &PolicyConfig,
    backend: &B,
    template: &PromptTemplate,
    mut tag: RequestTag,
) -> Result<Decision> {
    let finished = state.source.finished();
    if !should_attempt_write(state.t(), config.k, config.n, finished) {
        return Ok(Decision {
            action: Action::Read,
            invoked: false,
        });
    }

    let prompt = build_prompt(template, state, backend.joining())?;
    tag.cursor = state.t();
    tag.committed = state.target().len();
    let invocation = tag.invocation;
    let request = GenerationRequest::new(prompt, config.beam, config.max_new_tokens).with_tag(tag);
    let response = backend
        .generate(&request)
        .map_err(|source| Error::Backend { invocation, source })?;
    if response.candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }

    let payload = if finished {
        best_candidate(&response.candidates)
            .visible_tokens()
            .to_vec()
    } else {
        // votes are still normalized by the configured beam
        if response.candidates.len() < config.beam {
            log::warn!(
                "invocation {invocation}: backend returned {} of {} candidates",
                response.candidates.len(),
                config.beam
            );
        }
        ralcp_votes(&response.candidates, &config.agreement(), config.beam)?.prefix
    };

    let action = match (payload.is_empty(), finished) {
        (true, false) => Action::Read,
        (true, true) => Action::Finish,
        (false, _) => Action::Write(payload),
    };
    Ok(Decision {
        action,
        invoked: true,
    })
}

/// Highest score; the earliest candidate wins ties.
fn best_candidate(candidates: &[BeamCandidate]) -> &BeamCandidate {
    let mut best = &candidates[0];
    for c in &candidates[1..] {
        if c.score > best.score {
            best = c;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Read,
    Write,
    Finish,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceEvent {
    pub kind: EventKind,
    /// Step at which the action was taken (revealed words before it).
    pub t: usize,
    /// Revealed words after the action.
    pub cursor: usize,
    pub payload: Vec<String>,
    /// Backend invocation behind this event, if any. Not persisted.
    #[serde(skip)]
    pub invocation: Option<usize>,
}

/// Complete record of one streamed sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionTrace {
    pub id: String,
    pub source: String,
    pub reference: Option<String>,
    pub hypothesis: String,
    pub events: Vec<TraceEvent>,
    /// Per hypothesis word: source words revealed when it was committed.
    pub delays: Vec<usize>,
    pub invocations: usize,
    pub config: PolicyConfig,
}

impl SessionTrace {
    /// All WRITE payload pieces in order.
    pub fn written_pieces(&self) -> impl Iterator<Item = &str> {
        self.events
            .iter()
            .filter(|e| e.kind == EventKind::Write)
            .flat_map(|e| e.payload.iter().map(String::as_str))
    }
}

/// One trace per line.
pub fn traces_to_jsonl(traces: &[SessionTrace]) -> Result<String> {
    let mut out = String::new();
    for trace in traces {
        out.push_str(&serde_json::to_string(trace)?);
        out.push('\n');
    }
    Ok(out)
}

/// Parses trace JSONL, skipping blank lines. Errors name the 1-based line.
pub fn parse_traces(text: &str) -> Result<Vec<SessionTrace>> {
    let mut traces = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let trace: SessionTrace = serde_json::from_str(line).map_err(|e| Error::Trace {
            line: i + 1,
            message: e.to_string(),
        })?;
        trace.config.validate().map_err(|e| Error::Trace {
            line: i + 1,
            message: e.to_string(),
        })?;
        traces.push(trace);
    }
    Ok(traces)
}

/// Tracks per-word delays of the committed hypothesis. A word whose pieces
/// arrive across several writes takes the delay of the last one.
#[derive(Debug, Default)]
struct DelayTracker {
    words: Vec<String>,
    delays: Vec<usize>,
}

impl DelayTracker {
    fn update(&mut self, surface: &str, cursor: usize) {
        let words: Vec<String> = surface.split_whitespace().map(str::to_owned).collect();
        let stable = self
            .words
            .iter()
            .zip(&words)
            .take_while(|(a, b)| a == b)
            .count();
        self.delays.truncate(stable);
        self.delays.resize(words.len(), cursor);
        self.words = words;
    }
}

/// Streams `source_sentence` through the policy until FINISH.
pub fn run_session<B: Backend + ?Sized>(
    id: &str,
    source_sentence: &str,
    reference: Option<&str>,
    config: &PolicyConfig,
    backend: &B,
    template: &PromptTemplate,
) -> Result<SessionTrace> {
    config.validate()?;
    let mut stream = SourceStream::new(tokenize_source(source_sentence)?)?;
    let cap = config.target_cap(stream.total());
    let joining: &JoiningConvention = backend.joining();

    let mut events = Vec::new();
    stream.reveal();
    events.push(read_event(0, 1, None));
    let mut state = IncrementalState::new(stream);
    let mut delays = DelayTracker::default();
    let mut invocations = 0;

    loop {
        let t = state.t();
        let tag = RequestTag {
            sentence_id: id.to_owned(),
            invocation: invocations,
            ..RequestTag::default()
        };
        let decision = decide(&state, config, backend, template, tag)?;
        let invocation = decision.invoked.then_some(invocations);
        if decision.invoked {
            invocations += 1;
        }
        match decision.action {
            Action::Read => {
                state.source.reveal();
                events.push(read_event(t, state.t(), invocation));
            }
            Action::Write(payload) => {
                if state.target().len() + payload.len() > cap {
                    return Err(Error::CapExceeded { limit: cap });
                }
                state.commit(&payload);
                delays.update(&detokenize(state.target(), joining), t);
                events.push(TraceEvent {
                    kind: EventKind::Write,
                    t,
                    cursor: t,
                    payload: payload.into_iter().map(|tok| tok.text).collect(),
                    invocation,
                });
                if state.source.finished() {
                    events.push(finish_event(t));
                    break;
                }
                if config.write_mode == WriteMode::ForcedRead {
                    state.source.reveal();
                    events.push(read_event(t, state.t(), None));
                }
            }
            Action::Finish => {
                events.push(finish_event(t));
                break;
            }
        }
    }

    let hypothesis = detokenize(state.target(), joining);
    if let Some(&last) = delays.delays.last() {
        if last != state.source.total() {
            log::warn!("sentence {id}: final commit was empty, last delay {last}");
        }
    }
    Ok(SessionTrace {
        id: id.to_owned(),
        source: source_sentence.to_owned(),
        reference: reference.map(str::to_owned),
        hypothesis,
        events,
        delays: delays.delays,
        invocations,
        config: *config,
    })
}

fn read_event(t: usize, cursor: usize, invocation: Option<usize>) -> TraceEvent {
    TraceEvent {
        kind: EventKind::Read,
        t,
        cursor,
        payload: Vec::new(),
        invocation,
    }
}

fn finish_event(t: usize) -> TraceEvent {
    TraceEvent {
        kind: EventKind::Finish,
        t,
        cursor: t,
        payload: Vec::new(),
        invocation: None,
    }
}
