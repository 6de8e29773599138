//! Domain types shared by every stage of the pipeline, plus the two numeric
//! primitives everything else leans on: softmax over verbalizer logprobs and
//! argmax with the label-order tie rule.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on `Σ p = 1` for a constructed [`LabelDistribution`].
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// Stand-in for `ln 0` when a verbalizer never shows up in a backend response.
pub const LOGPROB_FLOOR: f64 = -100.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoreError {
    #[error("missing label `{0}`")]
    MissingLabel(String),
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("non-finite value for label `{0}`")]
    NonFinite(String),
    #[error("probability {value} for label `{label}` is outside [0, 1]")]
    OutOfRange { label: String, value: f64 },
    #[error("probabilities sum to {0}, not 1")]
    NotNormalized(f64),
    #[error("invalid task spec: {0}")]
    InvalidTask(String),
    #[error("invalid demonstration: {0}")]
    InvalidDemonstration(String),
    #[error("weight {0} is outside [0, 1]")]
    InvalidWeight(f64),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelId(pub String);

impl LabelId {
    pub fn new(s: impl Into<String>) -> Self {
        Self(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for LabelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for LabelId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

/// A classification task: its ordered labels, the surface token for each
/// label, and which template set renders it.
///
/// Label order is significant. Every argmax in the crate breaks ties in
/// favour of the label that appears first here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub labels: Vec<LabelId>,
    /// Verbalizer per label, parallel to `labels`.
    pub verbalizers: Vec<String>,
    pub answer_choices_text: String,
    pub template_set_id: String,
}

impl TaskSpec {
    pub fn new(
        task_id: impl Into<String>,
        labels_and_verbalizers: &[(&str, &str)],
        answer_choices_text: impl Into<String>,
        template_set_id: impl Into<String>,
    ) -> Result<Self, CoreError> {
        let spec = Self {
            task_id: task_id.into(),
            labels: labels_and_verbalizers.iter().map(|(l, _)| LabelId::from(*l)).collect(),
            verbalizers: labels_and_verbalizers.iter().map(|(_, v)| v.to_string()).collect(),
            answer_choices_text: answer_choices_text.into(),
            template_set_id: template_set_id.into(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        if self.labels.is_empty() {
            return Err(CoreError::InvalidTask(format!("task `{}` has no labels", self.task_id)));
        }
        if self.labels.len() != self.verbalizers.len() {
            return Err(CoreError::InvalidTask(format!(
                "task `{}` has {} labels but {} verbalizers",
                self.task_id,
                self.labels.len(),
                self.verbalizers.len()
            )));
        }
        let mut seen = HashSet::new();
        for l in &self.labels {
            if !seen.insert(l.as_str()) {
                return Err(CoreError::InvalidTask(format!("duplicate label `{l}`")));
            }
        }
        let mut seen = HashSet::new();
        for v in &self.verbalizers {
            if v.trim().is_empty() {
                return Err(CoreError::InvalidTask("empty verbalizer".into()));
            }
            if !seen.insert(v.as_str()) {
                return Err(CoreError::InvalidTask(format!("duplicate verbalizer `{v}`")));
            }
        }
        Ok(())
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn label_index(&self, label: &LabelId) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn contains(&self, label: &LabelId) -> bool {
        self.label_index(label).is_some()
    }

    pub fn verbalizer(&self, label: &LabelId) -> Option<&str> {
        self.label_index(label).map(|i| self.verbalizers[i].as_str())
    }

    /// Label whose verbalizer equals `token`, ignoring ASCII case.
    pub fn label_for_verbalizer(&self, token: &str) -> Option<&LabelId> {
        self.verbalizers
            .iter()
            .position(|v| v.eq_ignore_ascii_case(token))
            .map(|i| &self.labels[i])
    }

    pub fn verbalizer_pairs(&self) -> Vec<(LabelId, String)> {
        self.labels.iter().cloned().zip(self.verbalizers.iter().cloned()).collect()
    }
}

/// Named text fields of one task input, keyed by template placeholder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceInput {
    pub id: String,
    pub fields: BTreeMap<String, String>,
}

impl InstanceInput {
    pub fn new(id: impl Into<String>) -> Self {
        Self { id: id.into(), fields: BTreeMap::new() }
    }

    pub fn with(mut self, name: &str, value: impl Into<String>) -> Self {
        self.fields.insert(name.to_string(), value.into());
        self
    }

    pub fn field(&self, name: &str) -> Option<&str> {
        self.fields.get(name).map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub input: InstanceInput,
    pub explanation: String,
    pub label: LabelId,
}

impl Demonstration {
    pub fn new(
        task: &TaskSpec,
        input: InstanceInput,
        explanation: impl Into<String>,
        label: LabelId,
    ) -> Result<Self, CoreError> {
        let explanation = explanation.into();
        if explanation.trim().is_empty() {
            return Err(CoreError::InvalidDemonstration(format!(
                "demonstration `{}` has an empty explanation",
                input.id
            )));
        }
        if !task.contains(&label) {
            return Err(CoreError::UnknownLabel(label.0));
        }
        Ok(Self { input, explanation, label })
    }

    pub fn id(&self) -> &str {
        &self.input.id
    }
}

/// Probability mass over a task's labels, stored in task label order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelDistribution {
    labels: Vec<LabelId>,
    probs: Vec<f64>,
}

impl LabelDistribution {
    /// Builds a distribution from probabilities that already sum to one.
    pub fn new(task: &TaskSpec, probs: &[(LabelId, f64)]) -> Result<Self, CoreError> {
        Self::with_tolerance(task, probs, NORMALIZATION_TOLERANCE)
    }

    /// Like [`LabelDistribution::new`] but with a caller-chosen sum tolerance.
    ///
    /// Rows copied from printed tables are rounded to three decimals and do
    /// not sum to exactly one; this keeps them verbatim instead of silently
    /// renormalizing.
    pub fn with_tolerance(
        task: &TaskSpec,
        probs: &[(LabelId, f64)],
        tolerance: f64,
    ) -> Result<Self, CoreError> {
        let ordered = order_by_task(task, probs)?;
        for (label, &p) in task.labels.iter().zip(&ordered) {
            if !p.is_finite() {
                return Err(CoreError::NonFinite(label.0.clone()));
            }
            if !(0.0..=1.0).contains(&p) {
                return Err(CoreError::OutOfRange { label: label.0.clone(), value: p });
            }
        }
        let total: f64 = ordered.iter().sum();
        if (total - 1.0).abs() > tolerance {
            return Err(CoreError::NotNormalized(total));
        }
        Ok(Self { labels: task.labels.clone(), probs: ordered })
    }

    pub fn uniform(task: &TaskSpec) -> Self {
        let n = task.num_labels();
        Self { labels: task.labels.clone(), probs: vec![1.0 / n as f64; n] }
    }

    pub fn one_hot(task: &TaskSpec, label: &LabelId) -> Result<Self, CoreError> {
        let idx = task.label_index(label).ok_or_else(|| CoreError::UnknownLabel(label.0.clone()))?;
        let mut probs = vec![0.0; task.num_labels()];
        probs[idx] = 1.0;
        Ok(Self { labels: task.labels.clone(), probs })
    }

    pub fn labels(&self) -> &[LabelId] {
        &self.labels
    }

    /// Probabilities in task label order.
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, label: &LabelId) -> Option<f64> {
        self.labels.iter().position(|l| l == label).map(|i| self.probs[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&LabelId, f64)> {
        self.labels.iter().zip(self.probs.iter().copied())
    }
}

/// One sampled explanation and prediction together with the soft label
/// distribution conditioned on that explanation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub explanation: String,
    /// `None` exactly when `parse_ok` is false.
    pub prediction: Option<LabelId>,
    /// Absent for strategies that never query the soft distribution.
    pub distribution: Option<LabelDistribution>,
    pub raw_text: String,
    pub parse_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub candidate: Candidate,
    pub weight: f64,
}

impl ScoredCandidate {
    pub fn new(candidate: Candidate, weight: f64) -> Result<Self, CoreError> {
        if !weight.is_finite() || !(0.0..=1.0).contains(&weight) {
            return Err(CoreError::InvalidWeight(weight));
        }
        Ok(Self { candidate, weight })
    }
}

fn order_by_task(task: &TaskSpec, values: &[(LabelId, f64)]) -> Result<Vec<f64>, CoreError> {
    for (label, _) in values {
        if !task.contains(label) {
            return Err(CoreError::UnknownLabel(label.0.clone()));
        }
    }
    task.labels
        .iter()
        .map(|label| {
            values
                .iter()
                .find(|(l, _)| l == label)
                .map(|(_, v)| *v)
                .ok_or_else(|| CoreError::MissingLabel(label.0.clone()))
        })
        .collect()
}

/// Softmax of per-label logprobs, restricted to the task's verbalizers.
pub fn normalize_over_verbalizers(
    task: &TaskSpec,
    logprobs: &[(LabelId, f64)],
) -> Result<LabelDistribution, CoreError> {
    let ordered = order_by_task(task, logprobs)?;
    for (label, lp) in task.labels.iter().zip(&ordered) {
        if !lp.is_finite() {
            return Err(CoreError::NonFinite(label.0.clone()));
        }
    }
    let max = ordered.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = ordered.iter().map(|lp| (lp - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let probs = exps.into_iter().map(|e| e / total).collect();
    Ok(LabelDistribution { labels: task.labels.clone(), probs })
}

/// Index of the maximum, first index wins on ties.
pub fn argmax_index(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            None => best = Some(i),
            Some(b) if v > values[b] => best = Some(i),
            _ => {}
        }
    }
    best
}

pub fn argmax_label(d: &LabelDistribution) -> &LabelId {
    let idx = argmax_index(&d.probs).expect("distribution covers at least one label");
    &d.labels[idx]
}
