//! OpenAI-compatible HTTP backend (`/chat/completions` or `/completions`).

use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Mutex;
use std::time::Duration;

use rand::Rng;
use serde_json::{json, Value};

use super::{Backend, BackendError, Completion, FinishReason, SamplingParams};
use crate::domain::LOGPROB_FLOOR;

pub const ENV_API_BASE: &str = "EASE_API_BASE";
pub const ENV_API_KEY: &str = "EASE_API_KEY";
pub const ENV_MODEL: &str = "EASE_MODEL";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WireApi {
    #[default]
    Chat,
    Completions,
}

impl std::str::FromStr for WireApi {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "chat" => Ok(WireApi::Chat),
            "completions" => Ok(WireApi::Completions),
            other => Err(format!("unknown wire api `{other}` (expected chat or completions)")),
        }
    }
}

/// Exponential backoff: retry `i` (0-based) waits `base * 2^i`, stretched by
/// up to `jitter` of itself.
#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub jitter: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_retries: 3, base_delay: Duration::from_secs(1), jitter: 0.25 }
    }
}

impl RetryPolicy {
    pub fn delay(&self, retry: u32) -> Duration {
        let base = self.base_delay.mul_f64(f64::from(1u32 << retry.min(16)));
        let stretch = if self.jitter > 0.0 { rand::thread_rng().gen_range(0.0..self.jitter) } else { 0.0 };
        base.mul_f64(1.0 + stretch)
    }
}

#[derive(Debug, Clone)]
pub struct OpenAiConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    pub model: String,
    pub wire: WireApi,
    pub retry: RetryPolicy,
    pub timeout: Duration,
    pub top_logprobs: u32,
    /// Set to false for APIs that cannot return logprobs; label queries then
    /// report [`BackendError::UnsupportedByBackend`] without a request.
    pub logprobs_supported: bool,
    /// Append every request/response body to this JSONL file.
    pub trace: Option<PathBuf>,
}

impl OpenAiConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            api_key: None,
            model: model.into(),
            wire: WireApi::Chat,
            retry: RetryPolicy::default(),
            timeout: Duration::from_secs(120),
            top_logprobs: 20,
            logprobs_supported: true,
            trace: None,
        }
    }

    /// Reads `EASE_API_BASE`, `EASE_API_KEY` and `EASE_MODEL`.
    pub fn from_env() -> Result<Self, String> {
        let base = std::env::var(ENV_API_BASE).unwrap_or_else(|_| "https://api.openai.com/v1".into());
        let model = std::env::var(ENV_MODEL).map_err(|_| format!("{ENV_MODEL} is not set"))?;
        let mut cfg = Self::new(base, model);
        cfg.api_key = std::env::var(ENV_API_KEY).ok();
        Ok(cfg)
    }
}

pub struct OpenAiBackend {
    cfg: OpenAiConfig,
    agent: ureq::Agent,
    trace: Mutex<()>,
}

enum Attempt {
    Done(Value),
    Retry(BackendError),
    Fail(BackendError),
}

impl OpenAiBackend {
    pub fn new(cfg: OpenAiConfig) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(cfg.timeout).build();
        Self { cfg, agent, trace: Mutex::new(()) }
    }

    fn endpoint(&self) -> String {
        let base = self.cfg.base_url.trim_end_matches('/');
        match self.cfg.wire {
            WireApi::Chat => format!("{base}/chat/completions"),
            WireApi::Completions => format!("{base}/completions"),
        }
    }

    fn body(&self, prompt: &str, params: &SamplingParams, top_logprobs: Option<u32>) -> Value {
        let mut body = json!({
            "model": self.cfg.model,
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
            "n": 1,
        });
        if !params.stop_sequences.is_empty() {
            body["stop"] = json!(params.stop_sequences);
        }
        if let Some(seed) = params.seed {
            body["seed"] = json!(seed);
        }
        match self.cfg.wire {
            WireApi::Chat => {
                body["messages"] = json!([{ "role": "user", "content": prompt }]);
                if let Some(k) = top_logprobs {
                    body["logprobs"] = json!(true);
                    body["top_logprobs"] = json!(k);
                }
            }
            WireApi::Completions => {
                body["prompt"] = json!(prompt);
                if let Some(k) = top_logprobs {
                    body["logprobs"] = json!(k);
                }
            }
        }
        body
    }

    fn trace(&self, request: &Value, response: &str) {
        let Some(path) = &self.cfg.trace else { return };
        let _guard = self.trace.lock().expect("trace lock");
        let line = json!({ "request": request, "response": response });
        let res = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .and_then(|mut f| writeln!(f, "{line}"));
        if let Err(e) = res {
            log::warn!("cannot write trace {}: {e}", path.display());
        }
    }

    fn attempt(&self, body: &Value) -> Attempt {
        let mut req = self.agent.post(&self.endpoint()).set("Content-Type", "application/json");
        if let Some(key) = &self.cfg.api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        match req.send_string(&body.to_string()) {
            Ok(resp) => match resp.into_string() {
                Ok(text) => {
                    self.trace(body, &text);
                    match serde_json::from_str(&text) {
                        Ok(v) => Attempt::Done(v),
                        Err(e) => Attempt::Fail(BackendError::MalformedResponse(e.to_string())),
                    }
                }
                Err(e) => Attempt::Retry(BackendError::Unavailable(e.to_string())),
            },
            Err(ureq::Error::Status(code, resp)) => {
                let text = resp.into_string().unwrap_or_default();
                self.trace(body, &text);
                match code {
                    429 => Attempt::Retry(BackendError::RateLimited { attempts: 0 }),
                    500..=599 => Attempt::Retry(BackendError::Unavailable(format!("HTTP {code}"))),
                    _ => Attempt::Fail(BackendError::Rejected { status: code, body: text }),
                }
            }
            Err(ureq::Error::Transport(t)) => Attempt::Retry(BackendError::Unavailable(t.to_string())),
        }
    }

    fn post(&self, body: &Value) -> Result<Value, BackendError> {
        let attempts = self.cfg.retry.max_retries + 1;
        let mut last = BackendError::Unavailable("no attempt made".into());
        for i in 0..attempts {
            match self.attempt(body) {
                Attempt::Done(v) => return Ok(v),
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(e) => {
                    log::debug!("attempt {} of {attempts} failed: {e}", i + 1);
                    last = e;
                    if i + 1 < attempts {
                        std::thread::sleep(self.cfg.retry.delay(i));
                    }
                }
            }
        }
        Err(match last {
            BackendError::RateLimited { .. } => BackendError::RateLimited { attempts },
            other => other,
        })
    }
}

fn malformed(what: &str) -> BackendError {
    BackendError::MalformedResponse(format!("missing {what}"))
}

fn finish_reason(v: &Value) -> FinishReason {
    match v.as_str() {
        Some("stop") => FinishReason::Stop,
        Some("length") => FinishReason::Length,
        _ => FinishReason::Other,
    }
}

/// Sampled tokens and the top alternatives at the first position.
type Parsed = (String, FinishReason, Option<Vec<(String, f64)>>, Option<Vec<(String, f64)>>);

fn parse_response(wire: WireApi, v: &Value) -> Result<Parsed, BackendError> {
    let choice = v.get("choices").and_then(|c| c.get(0)).ok_or_else(|| malformed("choices[0]"))?;
    let finish = finish_reason(&choice["finish_reason"]);
    match wire {
        WireApi::Chat => {
            let text = choice["message"]["content"].as_str().ok_or_else(|| malformed("message.content"))?;
            let content = choice["logprobs"]["content"].as_array();
            let sampled = content.map(|items| {
                items
                    .iter()
                    .filter_map(|t| Some((t["token"].as_str()?.to_string(), t["logprob"].as_f64()?)))
                    .collect()
            });
            let top = content.and_then(|items| items.first()).and_then(|first| {
                first["top_logprobs"].as_array().map(|alts| {
                    alts.iter()
                        .filter_map(|t| Some((t["token"].as_str()?.to_string(), t["logprob"].as_f64()?)))
                        .collect()
                })
            });
            Ok((text.to_string(), finish, sampled, top))
        }
        WireApi::Completions => {
            let text = choice["text"].as_str().ok_or_else(|| malformed("text"))?;
            let lp = &choice["logprobs"];
            let sampled = match (lp["tokens"].as_array(), lp["token_logprobs"].as_array()) {
                (Some(toks), Some(lps)) => Some(
                    toks.iter()
                        .zip(lps)
                        .filter_map(|(t, l)| Some((t.as_str()?.to_string(), l.as_f64()?)))
                        .collect(),
                ),
                _ => None,
            };
            let top = lp["top_logprobs"].get(0).and_then(Value::as_object).map(|m| {
                m.iter().filter_map(|(k, v)| Some((k.clone(), v.as_f64()?))).collect()
            });
            Ok((text.to_string(), finish, sampled, top))
        }
    }
}

/// Logprob for each verbalizer from the alternatives at one position: the
/// best alternative whose trimmed text is a non-empty prefix of the
/// verbalizer (its first tokenized piece).
pub fn verbalizer_logprobs(top: &[(String, f64)], verbalizers: &[String]) -> Vec<f64> {
    verbalizers
        .iter()
        .map(|v| {
            top.iter()
                .filter(|(tok, _)| {
                    let t = tok.trim();
                    !t.is_empty() && v.trim().starts_with(t)
                })
                .map(|(_, lp)| *lp)
                .fold(None, |acc: Option<f64>, lp| Some(acc.map_or(lp, |a| a.max(lp))))
                .unwrap_or(LOGPROB_FLOOR)
        })
        .collect()
}

impl Backend for OpenAiBackend {
    fn backend_id(&self) -> &str {
        "openai"
    }

    fn model_id(&self) -> &str {
        &self.cfg.model
    }

    fn complete(&self, prompt: &str, params: &SamplingParams, _sample_index: u32) -> Result<Completion, BackendError> {
        let body = self.body(prompt, params, None);
        let v = self.post(&body)?;
        let (text, finish_reason, token_logprobs, _) = parse_response(self.cfg.wire, &v)?;
        Ok(Completion { text, token_logprobs, finish_reason })
    }

    fn label_logprobs(&self, prompt: &str, tokens: &[String]) -> Result<Vec<f64>, BackendError> {
        if !self.cfg.logprobs_supported {
            return Err(BackendError::UnsupportedByBackend);
        }
        let params = SamplingParams { temperature: 0.0, max_tokens: 1, stop_sequences: vec![], seed: None };
        let body = self.body(prompt, &params, Some(self.cfg.top_logprobs));
        let v = self.post(&body)?;
        let (_, _, _, top) = parse_response(self.cfg.wire, &v)?;
        let top = top.ok_or(BackendError::UnsupportedByBackend)?;
        Ok(verbalizer_logprobs(&top, tokens))
    }
}
