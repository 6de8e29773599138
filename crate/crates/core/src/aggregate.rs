//! Prediction-combination strategies and the inconsistency diagnostic.
//!
//! Every strategy produces a per-label mass in task label order and picks
//! its argmax, ties going to the earliest label. Unparseable candidates
//! abstain from the hard votes but keep their (uniform) mass in the soft
//! ones.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{LlmClient, SamplingParams};
use crate::domain::{argmax_index, argmax_label, Candidate, Demonstration, InstanceInput, LabelId, ScoredCandidate, TaskSpec};
use crate::error::{Error, Result};
use crate::prompting::{explanation_suffix, label_conditioned_suffix, Mode};
use crate::sampler::PromptContext;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    MajorityVote,
    SoftAggregate,
    WeightedSoft,
    WeightedHardVote,
    HardArgmaxVote,
    Flame,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationResult {
    pub prediction: LabelId,
    /// Parallel to the task's labels.
    pub per_label_mass: Vec<(LabelId, f64)>,
    pub strategy: Strategy,
    /// More than one label shares the maximal mass.
    pub tie_broken: bool,
    /// Set when the requested strategy could not apply and a fallback ran
    /// instead (all weights zero, or no candidate able to vote).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback: Option<String>,
}

impl AggregationResult {
    fn from_mass(task: &TaskSpec, mass: Vec<f64>, strategy: Strategy) -> Self {
        let idx = argmax_index(&mass).expect("task has labels");
        let tie_broken = mass.iter().filter(|&&m| m == mass[idx]).count() > 1;
        Self {
            prediction: task.labels[idx].clone(),
            per_label_mass: task.labels.iter().cloned().zip(mass).collect(),
            strategy,
            tie_broken,
            fallback: None,
        }
    }

    pub fn mass(&self, label: &LabelId) -> Option<f64> {
        self.per_label_mass.iter().find(|(l, _)| l == label).map(|(_, m)| *m)
    }
}

fn vote_mass<'a>(task: &TaskSpec, votes: impl Iterator<Item = (&'a LabelId, f64)>) -> Result<Vec<f64>> {
    let mut terms = vec![Vec::new(); task.num_labels()];
    for (label, w) in votes {
        let i = task.label_index(label).ok_or_else(|| crate::domain::CoreError::UnknownLabel(label.0.clone()))?;
        terms[i].push(w);
    }
    Ok(terms.into_iter().map(ordered_sum).collect())
}

/// Sum in sorted order so the result does not depend on candidate order.
fn ordered_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.into_iter().sum()
}

fn ensure_votes(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Config("no parseable candidate to vote".into()));
    }
    Ok(())
}

fn distribution_mass<'a>(task: &TaskSpec, rows: impl Iterator<Item = (&'a Candidate, f64)>) -> Result<Vec<f64>> {
    let mut terms = vec![Vec::new(); task.num_labels()];
    for (c, w) in rows {
        let d = c.distribution.as_ref().ok_or_else(|| Error::Config("candidate lacks a soft distribution".into()))?;
        if d.labels() != task.labels.as_slice() {
            return Err(Error::Config("candidate distribution does not match the task labels".into()));
        }
        for (t, p) in terms.iter_mut().zip(d.probs()) {
            t.push(w * p);
        }
    }
    Ok(terms.into_iter().map(ordered_sum).collect())
}

/// Plain vote count over sampled predictions.
pub fn majority_vote(task: &TaskSpec, candidates: &[Candidate]) -> Result<AggregationResult> {
    let votes: Vec<_> = candidates.iter().filter(|c| c.parse_ok).filter_map(|c| c.prediction.as_ref()).collect();
    ensure_votes(votes.len())?;
    let mass = vote_mass(task, votes.into_iter().map(|l| (l, 1.0)))?;
    Ok(AggregationResult::from_mass(task, mass, Strategy::MajorityVote))
}

/// Sum of the per-candidate label distributions.
pub fn soft_aggregate(task: &TaskSpec, candidates: &[Candidate]) -> Result<AggregationResult> {
    ensure_votes(candidates.len())?;
    let mass = distribution_mass(task, candidates.iter().map(|c| (c, 1.0)))?;
    Ok(AggregationResult::from_mass(task, mass, Strategy::SoftAggregate))
}

/// Weight-scaled sum of label distributions. Weights are used as given;
/// if every weight is zero the plain soft sum decides and `fallback` says so.
pub fn weighted_soft_aggregate(task: &TaskSpec, scored: &[ScoredCandidate]) -> Result<AggregationResult> {
    ensure_votes(scored.len())?;
    if scored.iter().all(|s| s.weight == 0.0) {
        let plain: Vec<Candidate> = scored.iter().map(|s| s.candidate.clone()).collect();
        let mut r = soft_aggregate(task, &plain)?;
        r.strategy = Strategy::WeightedSoft;
        r.fallback = Some("all_zero_weights".into());
        return Ok(r);
    }
    let mass = distribution_mass(task, scored.iter().map(|s| (&s.candidate, s.weight)))?;
    Ok(AggregationResult::from_mass(task, mass, Strategy::WeightedSoft))
}

/// Weight-scaled vote count over sampled predictions.
pub fn weighted_hard_vote(task: &TaskSpec, scored: &[ScoredCandidate]) -> Result<AggregationResult> {
    let votes: Vec<_> = scored
        .iter()
        .filter(|s| s.candidate.parse_ok)
        .filter_map(|s| s.candidate.prediction.as_ref().map(|p| (p, s.weight)))
        .collect();
    ensure_votes(votes.len())?;
    let mass = vote_mass(task, votes.into_iter())?;
    Ok(AggregationResult::from_mass(task, mass, Strategy::WeightedHardVote))
}

/// Majority vote over the argmax of each candidate's distribution rather
/// than its sampled token.
pub fn hard_argmax_vote(task: &TaskSpec, candidates: &[Candidate]) -> Result<AggregationResult> {
    let mut votes = Vec::new();
    for c in candidates.iter().filter(|c| c.parse_ok) {
        let d = c.distribution.as_ref().ok_or_else(|| Error::Config("candidate lacks a soft distribution".into()))?;
        votes.push(argmax_label(d));
    }
    ensure_votes(votes.len())?;
    let mass = vote_mass(task, votes.into_iter().map(|l| (l, 1.0)))?;
    Ok(AggregationResult::from_mass(task, mass, Strategy::HardArgmaxVote))
}

/// `(mismatches, considered)` over parseable candidates carrying a
/// distribution: how often the sampled token disagrees with the argmax.
pub fn inconsistency_counts<'a>(candidates: impl IntoIterator<Item = &'a Candidate>) -> (usize, usize) {
    let mut mismatched = 0;
    let mut total = 0;
    for c in candidates {
        if let (true, Some(p), Some(d)) = (c.parse_ok, &c.prediction, &c.distribution) {
            total += 1;
            if argmax_label(d) != p {
                mismatched += 1;
            }
        }
    }
    (mismatched, total)
}

/// Fraction of candidates whose sampled prediction differs from the argmax
/// of their own distribution; 0 when nothing qualifies.
pub fn inconsistency_ratio<'a>(candidates: impl IntoIterator<Item = &'a Candidate>) -> f64 {
    match inconsistency_counts(candidates) {
        (_, 0) => 0.0,
        (m, t) => m as f64 / t as f64,
    }
}

/// One label-conditioned explanation in the FLamE baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionedExplanation {
    pub label: LabelId,
    pub explanation: String,
    pub logprob: f64,
}

/// For each label, greedily generates an explanation conditioned on that
/// label (the predict-then-explain prompt with the answer filled in), then
/// reads the label's answer logprob with that explanation in the
/// explain-then-predict prompt. The label with the highest logprob wins.
///
/// Issues exactly one generation and one logprob request per label.
pub fn flame_baseline(
    instance: &InstanceInput,
    demos: &[Demonstration],
    client: &LlmClient,
    ctx: &PromptContext<'_>,
    shuffle_seed: u64,
) -> Result<(AggregationResult, Vec<ConditionedExplanation>)> {
    let task = ctx.task();
    let pairs = task.verbalizer_pairs();
    let explained: Vec<ConditionedExplanation> = pairs
        .par_iter()
        .map(|(label, verb)| {
            let gen = ctx.render(Mode::Pe, demos, instance, &label_conditioned_suffix(verb), shuffle_seed)?;
            let completion = client.complete(&gen.text, &SamplingParams::greedy(), 0)?;
            let explanation = conditioned_text(&completion.text);
            let score = ctx.render(Mode::Ep, demos, instance, &explanation_suffix(&explanation), shuffle_seed)?;
            let lp = client.label_logprobs(&score.text, &pairs)?;
            let logprob = lp.iter().find(|(l, _)| l == label).map(|(_, v)| *v).expect("label requested");
            Ok(ConditionedExplanation { label: label.clone(), explanation, logprob })
        })
        .collect::<Result<_>>()?;
    // exp keeps the mass non-negative without moving the argmax.
    let mass = explained.iter().map(|e| e.logprob.exp()).collect();
    Ok((AggregationResult::from_mass(task, mass, Strategy::Flame), explained))
}

fn conditioned_text(raw: &str) -> String {
    let body = raw.split("\n\n").next().unwrap_or("");
    let body = body.find(crate::prompting::ANSWER_CUE).map_or(body, |i| &body[..i]);
    body.trim().to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Judgement {
    Win,
    Tie,
    Lose,
}

/// Agreement between rater counts `(c1, c2)` and model scores `(s1, s2)`
/// for a pair of explanations. Equal counts are a tie; so are equal scores
/// under unequal counts, which the three-way rule leaves unassigned.
pub fn human_judge(c1: u32, c2: u32, s1: f64, s2: f64) -> Judgement {
    use std::cmp::Ordering::*;
    let scores = s1.partial_cmp(&s2).unwrap_or(Equal);
    match (c1.cmp(&c2), scores) {
        (Equal, _) | (_, Equal) => Judgement::Tie,
        (a, b) if a == b => Judgement::Win,
        _ => Judgement::Lose,
    }
}
