//! Uniform LLM access.
//!
//! [`Backend`] is the raw transport (HTTP, mock, offline). [`LlmClient`]
//! wraps one with the disk cache, the in-flight bound, request counters and
//! the logprob-free fallback; everything above this module talks to the
//! client only.

mod cache;
pub(crate) mod client;
pub mod mock;
pub mod openai;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{CacheKey, DiskCache};
pub use client::{ClientStats, LlmClient, FALLBACK_SAMPLES};
pub use mock::{MockBackend, MockRule, MockScript, Respond};
pub use openai::{OpenAiBackend, OpenAiConfig, RetryPolicy, WireApi};

pub const DEFAULT_TEMPERATURE: f64 = 0.7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("backend cannot return logprobs")]
    UnsupportedByBackend,
    #[error("request rejected with HTTP {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("mock script exhausted: {0}")]
    ScriptExhausted(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("cache error: {0}")]
    Cache(String),
}

impl BackendError {
    /// Errors that mean the backend could not be reached at all.
    pub fn is_exhaustion(&self) -> bool {
        matches!(self, BackendError::Unavailable(_) | BackendError::RateLimited { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    /// `0` means greedy decoding.
    pub temperature: f64,
    pub max_tokens: u32,
    pub stop_sequences: Vec<String>,
    /// Forwarded to backends that honour it; never part of correctness.
    pub seed: Option<u64>,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: 256,
            stop_sequences: vec!["\n\n".into()],
            seed: None,
        }
    }
}

impl SamplingParams {
    pub fn greedy() -> Self {
        Self { temperature: 0.0, ..Self::default() }
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn is_greedy(&self) -> bool {
        self.temperature == 0.0
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(BackendError::InvalidRequest(format!("temperature {}", self.temperature)));
        }
        if self.max_tokens == 0 {
            return Err(BackendError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    /// Continuation only; the prompt is never echoed.
    pub text: String,
    pub token_logprobs: Option<Vec<(String, f64)>>,
    pub finish_reason: FinishReason,
}

impl Completion {
    pub fn text(text: impl Into<String>) -> Self {
        Self { text: text.into(), token_logprobs: None, finish_reason: FinishReason::Stop }
    }
}

pub trait Backend: Send + Sync {
    fn backend_id(&self) -> &str;

    fn model_id(&self) -> &str;

    /// One draw. `sample_index` distinguishes the draws for the same prompt.
    fn complete(
        &self,
        prompt: &str,
        params: &SamplingParams,
        sample_index: u32,
    ) -> Result<Completion, BackendError>;

    /// Logprob of the first piece of each token string at the position
    /// right after `prompt`, parallel to `tokens`.
    fn label_logprobs(&self, prompt: &str, tokens: &[String]) -> Result<Vec<f64>, BackendError>;
}

/// Backend that refuses every request. Behind a warm cache this replays a
/// run without touching the network.
#[derive(Debug, Clone)]
pub struct OfflineBackend {
    backend_id: String,
    model_id: String,
}

impl OfflineBackend {
    pub fn new(backend_id: impl Into<String>, model_id: impl Into<String>) -> Self {
        Self { backend_id: backend_id.into(), model_id: model_id.into() }
    }
}

impl Backend for OfflineBackend {
    fn backend_id(&self) -> &str {
        &self.backend_id
    }

    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn complete(&self, _: &str, _: &SamplingParams, _: u32) -> Result<Completion, BackendError> {
        Err(BackendError::Unavailable("offline replay: completion not in cache".into()))
    }

    fn label_logprobs(&self, _: &str, _: &[String]) -> Result<Vec<f64>, BackendError> {
        Err(BackendError::Unavailable("offline replay: logprobs not in cache".into()))
    }
}
