use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{
    sort_by_score, Backend, GenerationRequest, GenerationResponse, JoiningConvention,
    DEFAULT_TIMEOUT,
};
use crate::agreement::BeamCandidate;
use crate::error::BackendError;

/// Request body of `POST /v1/generate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub prompt: String,
    pub n: usize,
    pub max_new_tokens: usize,
    pub stop: Vec<String>,
    pub logprobs: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireCandidate {
    pub tokens: Vec<String>,
    pub token_logprobs: Vec<f64>,
    pub finished: bool,
}

/// Response body of `POST /v1/generate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    pub candidates: Vec<WireCandidate>,
    pub model: String,
}

/// Which HTTP API the remote server speaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum WireDialect {
    /// The native `/v1/generate` schema.
    #[default]
    Native,
    /// OpenAI-style `/v1/completions` with `n` parallel samples and
    /// per-token log-probabilities.
    OpenAiCompletions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    /// Base URL, e.g. `http://127.0.0.1:8080`.
    pub endpoint: String,
    pub dialect: WireDialect,
    pub model: Option<String>,
    pub auth_token: Option<String>,
    pub timeout: Duration,
    pub max_in_flight: usize,
    pub joining: JoiningConvention,
    /// Sampling temperature for the OpenAI dialect.
    pub temperature: f64,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            dialect: WireDialect::Native,
            model: None,
            auth_token: None,
            timeout: DEFAULT_TIMEOUT,
            max_in_flight: 4,
            joining: JoiningConvention::ByteLevel(String::new()),
            temperature: 1.0,
        }
    }

    fn url(&self) -> String {
        let path = match self.dialect {
            WireDialect::Native => "/v1/generate",
            WireDialect::OpenAiCompletions => "/v1/completions",
        };
        let base = self.endpoint.trim_end_matches('/');
        if base.ends_with(path) {
            base.to_owned()
        } else {
            format!("{}{}", base.trim_end_matches("/v1"), path)
        }
    }
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

struct SlotGuard<'a>(&'a Slots);

impl Slots {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        SlotGuard(self)
    }
}

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        let mut free = self.0.free.lock().unwrap_or_else(|e| e.into_inner());
        *free += 1;
        self.0.cv.notify_one();
    }
}

/// HTTP client for a generation server.
pub struct RemoteBackend {
    config: RemoteConfig,
    agent: ureq::Agent,
    slots: Slots,
}

impl std::fmt::Debug for RemoteBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteBackend")
            .field("endpoint", &self.config.endpoint)
            .field("dialect", &self.config.dialect)
            .finish_non_exhaustive()
    }
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Result<Self, BackendError> {
        if !(config.endpoint.starts_with("http://") || config.endpoint.starts_with("https://")) {
            return Err(BackendError::Config(format!(
                "endpoint must be an http(s) URL, got {:?}",
                config.endpoint
            )));
        }
        config
            .joining
            .validate()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(true)
            .build()
            .into();
        let slots = Slots::new(config.max_in_flight);
        Ok(Self {
            config,
            agent,
            slots,
        })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn post(&self, request_id: &str, body: serde_json::Value) -> Result<String, BackendError> {
        let _slot = self.slots.acquire();
        let mut req = self
            .agent
            .post(&self.config.url())
            .header("Content-Type", "application/json");
        if let Some(token) = &self.config.auth_token {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let result = req
            .send_json(&body)
            .and_then(|mut resp| resp.body_mut().read_to_string());
        result.map_err(|e| self.classify(request_id, e))
    }

    fn classify(&self, request_id: &str, err: ureq::Error) -> BackendError {
        let request_id = request_id.to_owned();
        match err {
            ureq::Error::Timeout(_) => BackendError::Timeout {
                request_id,
                timeout_ms: self.config.timeout.as_millis() as u64,
            },
            ureq::Error::Io(e) if e.kind() == std::io::ErrorKind::TimedOut => {
                BackendError::Timeout {
                    request_id,
                    timeout_ms: self.config.timeout.as_millis() as u64,
                }
            }
            ureq::Error::StatusCode(code) => BackendError::Transport {
                request_id,
                message: format!("server answered HTTP {code}"),
            },
            other => BackendError::Transport {
                request_id,
                message: other.to_string(),
            },
        }
    }

    fn wire_request(&self, request: &GenerationRequest) -> serde_json::Value {
        match self.config.dialect {
            WireDialect::Native => serde_json::to_value(WireRequest {
                prompt: request.prompt.clone(),
                n: request.num_candidates,
                max_new_tokens: request.max_new_tokens,
                stop: request.stop_sequences.clone(),
                logprobs: true,
            })
            .expect("wire request serializes"),
            WireDialect::OpenAiCompletions => {
                let mut body = serde_json::json!({
                    "prompt": request.prompt,
                    "n": request.num_candidates,
                    "max_tokens": request.max_new_tokens,
                    "logprobs": 1,
                    "temperature": self.config.temperature,
                });
                if !request.stop_sequences.is_empty() {
                    body["stop"] = serde_json::json!(request.stop_sequences);
                }
                if let Some(model) = &self.config.model {
                    body["model"] = serde_json::json!(model);
                }
                body
            }
        }
    }

    fn parse_response(&self, request_id: &str, body: &str) -> Result<WireResponse, BackendError> {
        let malformed = |message: String| BackendError::Malformed {
            request_id: request_id.to_owned(),
            message,
        };
        match self.config.dialect {
            WireDialect::Native => serde_json::from_str(body).map_err(|e| malformed(e.to_string())),
            WireDialect::OpenAiCompletions => {
                let resp: OpenAiResponse =
                    serde_json::from_str(body).map_err(|e| malformed(e.to_string()))?;
                let candidates = resp
                    .choices
                    .into_iter()
                    .map(|choice| {
                        let logprobs = choice
                            .logprobs
                            .ok_or_else(|| malformed("choice carries no logprobs".into()))?;
                        Ok(WireCandidate {
                            tokens: logprobs.tokens,
                            token_logprobs: logprobs
                                .token_logprobs
                                .into_iter()
                                .map(|lp| lp.unwrap_or(0.0))
                                .collect(),
                            finished: choice.finish_reason.as_deref() == Some("stop"),
                        })
                    })
                    .collect::<Result<Vec<_>, BackendError>>()?;
                Ok(WireResponse {
                    candidates,
                    model: resp.model.unwrap_or_default(),
                })
            }
        }
    }
}

#[derive(Debug, Deserialize)]
struct OpenAiResponse {
    #[serde(default)]
    model: Option<String>,
    choices: Vec<OpenAiChoice>,
}

#[derive(Debug, Deserialize)]
struct OpenAiChoice {
    #[serde(default)]
    logprobs: Option<OpenAiLogprobs>,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Debug, Deserialize)]
struct OpenAiLogprobs {
    tokens: Vec<String>,
    token_logprobs: Vec<Option<f64>>,
}

/// Converts a wire response into scored candidates, enforcing the response
/// invariants. Per-token log-probabilities are summed into the candidate score.
pub(crate) fn convert_response(
    request: &GenerationRequest,
    wire: WireResponse,
    latency_ms: u64,
) -> Result<GenerationResponse, BackendError> {
    let request_id = request.tag.request_id();
    let malformed = |message: String| BackendError::Malformed {
        request_id: request_id.clone(),
        message,
    };
    if wire.candidates.is_empty() {
        return Err(malformed("no candidates".into()));
    }
    if wire.candidates.len() > request.num_candidates {
        return Err(malformed(format!(
            "{} candidates for n={}",
            wire.candidates.len(),
            request.num_candidates
        )));
    }
    if wire.candidates.len() < request.num_candidates {
        log::warn!(
            "request {request_id}: {} of {} candidates returned",
            wire.candidates.len(),
            request.num_candidates
        );
    }
    let tail: String = {
        let chars: Vec<char> = request.prompt.chars().collect();
        chars[chars.len().saturating_sub(16)..].iter().collect()
    };
    let mut candidates = Vec::with_capacity(wire.candidates.len());
    for (i, c) in wire.candidates.into_iter().enumerate() {
        if c.tokens.len() != c.token_logprobs.len() {
            return Err(malformed(format!(
                "candidate {i}: {} tokens but {} logprobs",
                c.tokens.len(),
                c.token_logprobs.len()
            )));
        }
        let text: String = c.tokens.concat();
        let echoes = tail.chars().count() == 16
            && (text.starts_with(&tail) || text.starts_with(request.prompt.as_str()));
        if echoes {
            return Err(malformed(format!("candidate {i} echoes the prompt")));
        }
        let score: f64 = c.token_logprobs.iter().sum();
        let cand = BeamCandidate::from_pieces(&c.tokens, score, c.finished)
            .map_err(|e| malformed(format!("candidate {i}: {e}")))?;
        candidates.push(cand);
    }
    sort_by_score(&mut candidates);
    Ok(GenerationResponse {
        candidates,
        model_id: wire.model,
        latency_ms,
    })
}

impl Backend for RemoteBackend {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        request.validate()?;
        let request_id = request.tag.request_id();
        let started = Instant::now();
        let body = self.post(&request_id, self.wire_request(request))?;
        let wire = self.parse_response(&request_id, &body)?;
        convert_response(request, wire, started.elapsed().as_millis() as u64)
    }

    fn joining(&self) -> &JoiningConvention {
        &self.config.joining
    }
}
