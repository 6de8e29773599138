use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};

use serde::{Deserialize, Serialize};

use super::cache::KeyMaterial;
use super::{Backend, BackendError, Completion, DiskCache, SamplingParams};
use crate::domain::{LabelId, LOGPROB_FLOOR};

/// One-token draws used to estimate label probabilities when the backend
/// cannot return logprobs.
pub const FALLBACK_SAMPLES: u32 = 16;

pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientStats {
    /// Requests issued by the pipeline, cached or not.
    pub logical_requests: u64,
    /// Requests that reached the backend.
    pub backend_calls: u64,
    pub cache_hits: u64,
    pub peak_in_flight: usize,
}

struct Limiter {
    max: usize,
    current: Mutex<usize>,
    freed: Condvar,
    peak: AtomicUsize,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn new(max: usize) -> Self {
        Self { max: max.max(1), current: Mutex::new(0), freed: Condvar::new(), peak: AtomicUsize::new(0) }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.current.lock().expect("limiter lock");
        while *n >= self.max {
            n = self.freed.wait(n).expect("limiter lock");
        }
        *n += 1;
        self.peak.fetch_max(*n, Ordering::Relaxed);
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.current.lock().expect("limiter lock");
        *n -= 1;
        self.0.freed.notify_one();
    }
}

/// Cached, bounded access to a [`Backend`]. Cheap to share behind `&`.
pub struct LlmClient {
    backend: Arc<dyn Backend>,
    cache: Option<DiskCache>,
    limiter: Limiter,
    logical: AtomicU64,
    calls: AtomicU64,
    hits: AtomicU64,
}

impl LlmClient {
    pub fn new(backend: Arc<dyn Backend>) -> Self {
        Self {
            backend,
            cache: None,
            limiter: Limiter::new(DEFAULT_MAX_IN_FLIGHT),
            logical: AtomicU64::new(0),
            calls: AtomicU64::new(0),
            hits: AtomicU64::new(0),
        }
    }

    pub fn with_cache(mut self, cache: DiskCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_max_in_flight(mut self, max: usize) -> Self {
        self.limiter = Limiter::new(max);
        self
    }

    pub fn backend(&self) -> &dyn Backend {
        self.backend.as_ref()
    }

    pub fn stats(&self) -> ClientStats {
        ClientStats {
            logical_requests: self.logical.load(Ordering::Relaxed),
            backend_calls: self.calls.load(Ordering::Relaxed),
            cache_hits: self.hits.load(Ordering::Relaxed),
            peak_in_flight: self.limiter.peak.load(Ordering::Relaxed),
        }
    }

    fn material(
        &self,
        kind: &str,
        prompt: &str,
        params: Option<&SamplingParams>,
        tokens: Option<&[String]>,
        sample_index: u32,
    ) -> KeyMaterial {
        KeyMaterial {
            backend: self.backend.backend_id().to_string(),
            model: self.backend.model_id().to_string(),
            kind: kind.to_string(),
            prompt: prompt.to_string(),
            params: params.cloned(),
            tokens: tokens.map(<[String]>::to_vec),
            sample_index,
        }
    }

    fn cached<T, F>(&self, material: KeyMaterial, call: F) -> Result<T, BackendError>
    where
        T: Serialize + serde::de::DeserializeOwned,
        F: FnOnce() -> Result<T, BackendError>,
    {
        self.logical.fetch_add(1, Ordering::Relaxed);
        if let Some(cache) = &self.cache {
            if let Some(v) = cache.get(&material)? {
                self.hits.fetch_add(1, Ordering::Relaxed);
                return Ok(v);
            }
        }
        let value = {
            let _permit = self.limiter.acquire();
            self.calls.fetch_add(1, Ordering::Relaxed);
            call()?
        };
        if let Some(cache) = &self.cache {
            cache.put(&material, &value)?;
        }
        Ok(value)
    }

    pub fn complete(
        &self,
        prompt: &str,
        params: &SamplingParams,
        sample_index: u32,
    ) -> Result<Completion, BackendError> {
        if prompt.is_empty() {
            return Err(BackendError::InvalidRequest("empty prompt".into()));
        }
        params.validate()?;
        let material = self.material("completion", prompt, Some(params), None, sample_index);
        self.cached(material, || self.backend.complete(prompt, params, sample_index))
    }

    /// Logprob of each label's verbalizer at the next position after
    /// `prompt`, in the order given.
    ///
    /// Backends without logprob support are answered by drawing
    /// [`FALLBACK_SAMPLES`] one-token samples at temperature 1 and using
    /// verbalizer frequencies; unseen verbalizers get [`LOGPROB_FLOOR`].
    pub fn label_logprobs(
        &self,
        prompt: &str,
        verbalizers: &[(LabelId, String)],
    ) -> Result<Vec<(LabelId, f64)>, BackendError> {
        if prompt.is_empty() {
            return Err(BackendError::InvalidRequest("empty prompt".into()));
        }
        if verbalizers.iter().any(|(_, v)| v.trim().is_empty()) {
            return Err(BackendError::InvalidRequest("empty verbalizer".into()));
        }
        let tokens: Vec<String> = verbalizers.iter().map(|(_, v)| v.clone()).collect();
        let material = self.material("logprobs", prompt, None, Some(&tokens), 0);
        let values = match self.cached(material, || self.backend.label_logprobs(prompt, &tokens)) {
            Ok(v) => v,
            Err(BackendError::UnsupportedByBackend) => self.estimate_by_frequency(prompt, &tokens)?,
            Err(e) => return Err(e),
        };
        if values.len() != tokens.len() {
            return Err(BackendError::MalformedResponse(format!(
                "expected {} logprobs, got {}",
                tokens.len(),
                values.len()
            )));
        }
        Ok(verbalizers.iter().map(|(l, _)| l.clone()).zip(values).collect())
    }

    fn estimate_by_frequency(&self, prompt: &str, tokens: &[String]) -> Result<Vec<f64>, BackendError> {
        let params = SamplingParams { temperature: 1.0, max_tokens: 1, stop_sequences: vec![], seed: None };
        let mut counts = vec![0u32; tokens.len()];
        for i in 0..FALLBACK_SAMPLES {
            let c = self.complete(prompt, &params, i)?;
            if let Some(word) = first_word(&c.text) {
                if let Some(idx) = match_first_piece(word, tokens) {
                    counts[idx] += 1;
                }
            }
        }
        Ok(counts
            .into_iter()
            .map(|n| if n == 0 { LOGPROB_FLOOR } else { (f64::from(n) / f64::from(FALLBACK_SAMPLES)).ln() })
            .collect())
    }
}

/// First run of alphanumeric characters.
pub(crate) fn first_word(text: &str) -> Option<&str> {
    let start = text.find(|c: char| c.is_alphanumeric())?;
    let rest = &text[start..];
    let end = rest.find(|c: char| !c.is_alphanumeric()).unwrap_or(rest.len());
    Some(&rest[..end])
}

/// Index of the verbalizer a decoded piece stands for: an exact
/// (case-insensitive) match wins, otherwise the first verbalizer the piece
/// is a prefix of.
pub(crate) fn match_first_piece(piece: &str, verbalizers: &[String]) -> Option<usize> {
    let piece = piece.trim();
    if piece.is_empty() {
        return None;
    }
    let lower = piece.to_lowercase();
    verbalizers
        .iter()
        .position(|v| v.trim().to_lowercase() == lower)
        .or_else(|| verbalizers.iter().position(|v| v.trim().to_lowercase().starts_with(&lower)))
}
