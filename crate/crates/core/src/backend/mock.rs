//! Scriptable deterministic backend.
//!
//! A script is an ordered list of rules plus a default. The first rule
//! whose regex matches the prompt (and whose kind fits the request) answers
//! it. Scripts are plain JSON so the CLI can run against them too:
//!
//! ```json
//! {
//!   "model": "toy",
//!   "rules": [
//!     { "pattern": "good one", "kind": "logprobs",
//!       "respond": { "type": "probs", "probs": { "Yes": 0.8, "No": 0.2 } } },
//!     { "pattern": "Explanation:$", "kind": "completion",
//!       "respond": { "type": "sequence", "texts": [" A.\nAnswer: Yes", " B.\nAnswer: No"] } }
//!   ],
//!   "default": { "type": "text", "text": " Yes" }
//! }
//! ```
//!
//! `sequence` answers draw `i` with `texts[i]`, so concurrent draws see the
//! same script order as sequential ones.

use std::collections::BTreeMap;
use std::sync::Mutex;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, Completion, SamplingParams};
use crate::domain::LOGPROB_FLOOR;
use crate::rng::{fnv1a, SplitMix64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    #[default]
    Any,
    Completion,
    Logprobs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockFailure {
    Unavailable,
    RateLimited,
    Malformed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Respond {
    Text { text: String },
    /// Draw `i` gets `texts[i]`; draws past the end exhaust the script.
    Sequence { texts: Vec<String> },
    /// Sampled by weight at temperature > 0, heaviest first choice when greedy.
    Weighted { choices: Vec<(String, f64)> },
    /// Next-token distribution over verbalizer strings. Completions sample a
    /// single token from it.
    Probs {
        probs: BTreeMap<String, f64>,
        #[serde(default = "yes")]
        logprobs_supported: bool,
    },
    Error { error: MockFailure },
}

fn yes() -> bool {
    true
}

impl Respond {
    pub fn text(s: impl Into<String>) -> Self {
        Respond::Text { text: s.into() }
    }

    pub fn sequence<I, S>(texts: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Respond::Sequence { texts: texts.into_iter().map(Into::into).collect() }
    }

    pub fn probs(pairs: &[(&str, f64)]) -> Self {
        Respond::Probs {
            probs: pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            logprobs_supported: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MockRule {
    pub pattern: String,
    #[serde(default)]
    pub kind: RuleKind,
    pub respond: Respond,
    #[serde(skip)]
    compiled: Option<Regex>,
}

impl MockRule {
    pub fn new(pattern: &str) -> Result<Self, regex::Error> {
        Ok(Self {
            pattern: pattern.to_string(),
            kind: RuleKind::Any,
            respond: Respond::text(""),
            compiled: Some(Regex::new(pattern)?),
        })
    }

    pub fn kind(mut self, kind: RuleKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn respond(mut self, respond: Respond) -> Self {
        self.respond = respond;
        self
    }

    fn compile(&mut self) -> Result<(), regex::Error> {
        if self.compiled.is_none() {
            self.compiled = Some(Regex::new(&self.pattern)?);
        }
        Ok(())
    }

    fn matches(&self, prompt: &str, kind: RuleKind) -> bool {
        (self.kind == RuleKind::Any || self.kind == kind)
            && self.compiled.as_ref().is_some_and(|r| r.is_match(prompt))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub rules: Vec<MockRule>,
    pub default: Respond,
}

fn default_model() -> String {
    "mock".into()
}

impl MockScript {
    pub fn new(default: Respond) -> Self {
        Self { model: default_model(), seed: 0, rules: Vec::new(), default }
    }

    pub fn rule(mut self, rule: MockRule) -> Self {
        self.rules.push(rule);
        self
    }

    pub fn model(mut self, model: impl Into<String>) -> Self {
        self.model = model.into();
        self
    }

    pub fn from_json(json: &str) -> Result<Self, BackendError> {
        let mut script: MockScript =
            serde_json::from_str(json).map_err(|e| BackendError::InvalidRequest(format!("mock script: {e}")))?;
        for r in &mut script.rules {
            r.compile().map_err(|e| BackendError::InvalidRequest(format!("mock rule `{}`: {e}", r.pattern)))?;
        }
        Ok(script)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordedRequest {
    pub kind: RuleKind,
    pub prompt: String,
    pub sample_index: u32,
    pub temperature: Option<f64>,
    /// Index of the rule that answered, `None` for the default.
    pub rule: Option<usize>,
}

pub struct MockBackend {
    script: MockScript,
    log: Mutex<Vec<RecordedRequest>>,
    latency: Option<Duration>,
}

impl MockBackend {
    pub fn new(script: MockScript) -> Self {
        Self { script, log: Mutex::new(Vec::new()), latency: None }
    }

    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = Some(latency);
        self
    }

    pub fn requests(&self) -> Vec<RecordedRequest> {
        self.log.lock().expect("mock log").clone()
    }

    pub fn request_count(&self) -> usize {
        self.log.lock().expect("mock log").len()
    }

    fn route(&self, prompt: &str, kind: RuleKind) -> (Option<usize>, &Respond) {
        self.script
            .rules
            .iter()
            .enumerate()
            .find(|(_, r)| r.matches(prompt, kind))
            .map(|(i, r)| (Some(i), &r.respond))
            .unwrap_or((None, &self.script.default))
    }

    fn record(&self, kind: RuleKind, prompt: &str, sample_index: u32, temperature: Option<f64>, rule: Option<usize>) {
        if let Some(d) = self.latency {
            std::thread::sleep(d);
        }
        self.log.lock().expect("mock log").push(RecordedRequest {
            kind,
            prompt: prompt.to_string(),
            sample_index,
            temperature,
            rule,
        });
    }

    fn rng(&self, prompt: &str, sample_index: u32) -> SplitMix64 {
        SplitMix64::new(self.script.seed ^ fnv1a(prompt.as_bytes()) ^ u64::from(sample_index).rotate_left(32))
    }
}

fn failure(f: MockFailure) -> BackendError {
    match f {
        MockFailure::Unavailable => BackendError::Unavailable("scripted outage".into()),
        MockFailure::RateLimited => BackendError::RateLimited { attempts: 4 },
        MockFailure::Malformed => BackendError::MalformedResponse("scripted malformed response".into()),
    }
}

/// Heaviest choice when greedy, otherwise a weighted draw. Ties go to the
/// earlier choice.
fn pick<'a>(choices: &'a [(String, f64)], greedy: bool, rng: &mut SplitMix64) -> Option<&'a str> {
    if choices.is_empty() {
        return None;
    }
    if greedy {
        let weights: Vec<f64> = choices.iter().map(|(_, w)| *w).collect();
        return crate::domain::argmax_index(&weights).map(|i| choices[i].0.as_str());
    }
    let total: f64 = choices.iter().map(|(_, w)| w.max(0.0)).sum();
    let mut x = rng.next_f64() * total;
    for (text, w) in choices {
        x -= w.max(0.0);
        if x < 0.0 {
            return Some(text);
        }
    }
    choices.last().map(|(t, _)| t.as_str())
}

impl Backend for MockBackend {
    fn backend_id(&self) -> &str {
        "mock"
    }

    fn model_id(&self) -> &str {
        &self.script.model
    }

    fn complete(&self, prompt: &str, params: &SamplingParams, sample_index: u32) -> Result<Completion, BackendError> {
        let (rule, respond) = self.route(prompt, RuleKind::Completion);
        self.record(RuleKind::Completion, prompt, sample_index, Some(params.temperature), rule);
        let mut rng = self.rng(prompt, sample_index);
        let text = match respond {
            Respond::Text { text } => text.clone(),
            Respond::Sequence { texts } => texts.get(sample_index as usize).cloned().ok_or_else(|| {
                BackendError::ScriptExhausted(format!(
                    "rule {} has {} responses, draw {sample_index} requested",
                    rule.map_or("default".to_string(), |r| r.to_string()),
                    texts.len()
                ))
            })?,
            Respond::Weighted { choices } => pick(choices, params.is_greedy(), &mut rng)
                .ok_or_else(|| BackendError::ScriptExhausted("empty weighted rule".into()))?
                .to_string(),
            Respond::Probs { probs, .. } => {
                let choices: Vec<(String, f64)> = probs.iter().map(|(k, v)| (k.clone(), *v)).collect();
                let tok = pick(&choices, params.is_greedy(), &mut rng)
                    .ok_or_else(|| BackendError::ScriptExhausted("empty probs rule".into()))?;
                format!(" {tok}")
            }
            Respond::Error { error } => return Err(failure(*error)),
        };
        Ok(Completion::text(text))
    }

    fn label_logprobs(&self, prompt: &str, tokens: &[String]) -> Result<Vec<f64>, BackendError> {
        let (rule, respond) = self.route(prompt, RuleKind::Logprobs);
        self.record(RuleKind::Logprobs, prompt, 0, None, rule);
        match respond {
            Respond::Probs { logprobs_supported: false, .. } => Err(BackendError::UnsupportedByBackend),
            Respond::Probs { probs, .. } => Ok(tokens
                .iter()
                .map(|t| match probs.get(t) {
                    Some(&p) if p > 0.0 => p.ln(),
                    _ => LOGPROB_FLOOR,
                })
                .collect()),
            Respond::Error { error } => Err(failure(*error)),
            _ => Err(BackendError::MalformedResponse(format!(
                "mock rule {} has no probabilities for a logprob request",
                rule.map_or("default".to_string(), |r| r.to_string())
            ))),
        }
    }
}
