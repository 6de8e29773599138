//! Method dispatch over test splits.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Method, RunConfig, ScorerKind};
use super::dataset::{make_splits, to_demonstrations, DatasetRecord};
use crate::aggregate::{self, AggregationResult, ConditionedExplanation};
use crate::backend::{ClientStats, LlmClient, SamplingParams};
use crate::domain::{Candidate, Demonstration, LabelId, ScoredCandidate};
use crate::error::{Error, Result};
use crate::prompting::{ApproxTokenCounter, Mode, TaskProfile};
use crate::rng::{self, derive_seed, instance_seed};
use crate::sampler::{self, parse_candidate, PipelineMode, PromptContext, SamplerConfig};
use crate::scorer::{self, BootstrapConfig, NegativeMap, ScoringDemoSet};
use crate::templates::TemplateLibrary;

/// What a run needs besides its configuration.
pub struct RunDeps<'a> {
    pub library: &'a TemplateLibrary,
    pub client: &'a LlmClient,
    pub train: &'a [DatasetRecord],
    pub test: &'a [DatasetRecord],
    /// Records the loader dropped; echoed into the report.
    pub dropped_records: usize,
    /// Directory for `<task>/<seed>.jsonl` bootstrap files. Existing files
    /// are reused; new mining results are written there.
    pub bootstrap_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceAudit {
    pub id: String,
    pub split: usize,
    pub gold: LabelId,
    pub prediction: Option<LabelId>,
    pub correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub candidates: Vec<Candidate>,
    /// Parallel to `candidates` for scored methods.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aggregation: Option<AggregationResult>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub conditioned: Vec<ConditionedExplanation>,
}

impl InstanceAudit {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitResult {
    pub size: usize,
    pub failures: usize,
    /// Correct over non-failed instances; 0 when every instance failed.
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerSummary {
    pub kind: ScorerKind,
    /// `true` when bootstrapping found no negatives and the scorer ran zero-shot.
    pub degraded_to_zero_shot: bool,
    pub demo_items: usize,
    pub instances_with_negatives: usize,
}

/// Everything a run produced except timing and request counts, which live in
/// [`RunStats`] so that the report itself is reproducible byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: RunConfig,
    pub demonstrations: Vec<String>,
    pub splits: Vec<SplitResult>,
    pub split_accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    pub failures: usize,
    pub dropped_records: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inconsistency_ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scorer: Option<ScorerSummary>,
    pub instances: Vec<InstanceAudit>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub wall_clock_ms: u128,
    pub requests: ClientStats,
}

/// The `K` demonstrations for a run: a seeded draw from the training
/// records, fixed per (task, run seed).
pub fn select_demonstrations(train: &[DatasetRecord], k: usize, run_seed: u64) -> Result<Vec<Demonstration>> {
    let with_expl: Vec<DatasetRecord> = train.iter().filter(|r| r.explanation.is_some()).cloned().collect();
    if with_expl.is_empty() {
        return Err(Error::Config("training data has no records with explanations".into()));
    }
    if with_expl.len() < k {
        log::warn!("only {} training records with explanations; using all of them instead of {k}", with_expl.len());
    }
    let picked: Vec<DatasetRecord> =
        rng::shuffled(&with_expl, derive_seed(run_seed, "demos")).into_iter().take(k).collect();
    Ok(to_demonstrations(&picked)?)
}

enum Weigher {
    None,
    Llm(ScoringDemoSet),
    Lexical,
}

struct Runner<'a> {
    cfg: &'a RunConfig,
    client: &'a LlmClient,
    ctx: PromptContext<'a>,
    demos: Vec<Demonstration>,
    weigher: Weigher,
}

impl Runner<'_> {
    fn shuffle(&self, id: &str) -> u64 {
        instance_seed(self.cfg.run_seed, "prompt-shuffle", id)
    }

    fn sampler(&self) -> SamplerConfig {
        SamplerConfig {
            n_candidates: self.cfg.n_candidates,
            temperature: self.cfg.temperature,
            mode: PipelineMode::Ep,
            ..SamplerConfig::default()
        }
    }

    fn weights(&self, record: &DatasetRecord, candidates: &[Candidate]) -> Result<Vec<f64>> {
        let score_seed = derive_seed(self.cfg.run_seed, "score-shuffle");
        candidates
            .par_iter()
            .map(|c| {
                if !c.parse_ok {
                    return Ok(0.0);
                }
                match &self.weigher {
                    Weigher::None => Ok(1.0),
                    Weigher::Lexical => Ok(scorer::lexical_score(&record.input, &c.explanation)),
                    Weigher::Llm(set) => scorer::score_explanation(
                        &record.input,
                        &c.explanation,
                        set,
                        self.cfg.scorer.verbalizers,
                        self.client,
                        &self.ctx,
                        score_seed,
                    ),
                }
            })
            .collect()
    }

    fn greedy(&self, record: &DatasetRecord, mode: Mode, audit: &mut InstanceAudit) -> Result<LabelId> {
        let prompt = self.ctx.render(mode, &self.demos, &record.input, "", self.shuffle(record.id()))?;
        let completion = self.client.complete(&prompt.text, &SamplingParams::greedy(), 0)?;
        // ICL queries end at the answer cue, exactly like predict-then-explain.
        let pipeline = if mode == Mode::Ep { PipelineMode::Ep } else { PipelineMode::Pe };
        let parsed = parse_candidate(&completion.text, pipeline, self.ctx.task());
        audit.candidates.push(Candidate {
            explanation: parsed.explanation,
            prediction: parsed.prediction.clone(),
            distribution: None,
            raw_text: completion.text,
            parse_ok: parsed.parse_ok,
        });
        parsed.prediction.ok_or_else(|| Error::AllParsesFailed(record.id().to_string()))
    }

    fn instance(&self, record: &DatasetRecord, audit: &mut InstanceAudit) -> Result<LabelId> {
        let task = self.ctx.task();
        let seed = self.shuffle(record.id());
        let result = match self.cfg.method {
            Method::Icl => return self.greedy(record, Mode::Icl, audit),
            Method::Pe => return self.greedy(record, Mode::Pe, audit),
            Method::Ep => return self.greedy(record, Mode::Ep, audit),
            Method::SelfConsistency => {
                let prompt = self.ctx.render(Mode::Ep, &self.demos, &record.input, "", seed)?;
                audit.candidates = sampler::draw_candidates(&prompt, &self.sampler(), task, self.client)?;
                aggregate::majority_vote(task, &audit.candidates)
                    .map_err(|_| Error::AllParsesFailed(record.id().to_string()))?
            }
            Method::Ease | Method::EaseNoBls | Method::HardArgmax => {
                audit.candidates =
                    sampler::sample_candidates(&record.input, &self.demos, &self.sampler(), self.client, &self.ctx, seed)?;
                match self.cfg.method {
                    Method::Ease => {
                        let w = self.weights(record, &audit.candidates)?;
                        let scored = scored(&audit.candidates, &w)?;
                        audit.weights = Some(w);
                        aggregate::weighted_soft_aggregate(task, &scored)?
                    }
                    Method::EaseNoBls => aggregate::soft_aggregate(task, &audit.candidates)?,
                    _ => aggregate::hard_argmax_vote(task, &audit.candidates)?,
                }
            }
            Method::EaseNoSpa => {
                let prompt = self.ctx.render(Mode::Ep, &self.demos, &record.input, "", seed)?;
                audit.candidates = sampler::draw_candidates(&prompt, &self.sampler(), task, self.client)?;
                if audit.candidates.iter().all(|c| !c.parse_ok) {
                    return Err(Error::AllParsesFailed(record.id().to_string()));
                }
                let w = self.weights(record, &audit.candidates)?;
                let scored = scored(&audit.candidates, &w)?;
                audit.weights = Some(w);
                aggregate::weighted_hard_vote(task, &scored)?
            }
            Method::Flame => {
                let (r, conditioned) = aggregate::flame_baseline(&record.input, &self.demos, self.client, &self.ctx, seed)?;
                audit.conditioned = conditioned;
                r
            }
        };
        let prediction = result.prediction.clone();
        audit.aggregation = Some(result);
        Ok(prediction)
    }
}

fn scored(candidates: &[Candidate], weights: &[f64]) -> Result<Vec<ScoredCandidate>> {
    candidates
        .iter()
        .zip(weights)
        .map(|(c, &w)| Ok(ScoredCandidate::new(c.clone(), w)?))
        .collect()
}

/// Mined negatives and the scoring demo set for a run, loaded from
/// `bootstrap_dir` when present there.
pub fn bootstrap(
    cfg: &RunConfig,
    demos: &[Demonstration],
    client: &LlmClient,
    ctx: &PromptContext<'_>,
    bootstrap_dir: Option<&std::path::Path>,
) -> Result<(NegativeMap, std::result::Result<ScoringDemoSet, Error>)> {
    let path = bootstrap_dir.map(|d| d.join(&cfg.task_id).join(format!("{}.jsonl", cfg.run_seed)));
    if let Some(p) = path.as_ref().filter(|p| p.exists()) {
        let (negatives, set) = scorer::load_bootstrap(p)?;
        let set = if set.is_empty() { Err(Error::EmptyDemoSet) } else { Ok(set) };
        return Ok((negatives, set));
    }
    let bcfg = BootstrapConfig {
        k_exemplars: cfg.scorer.k_exemplars,
        n_mine: cfg.n_candidates,
        temperature: cfg.temperature,
        seed: derive_seed(cfg.run_seed, "bootstrap"),
        mode: cfg.scorer.bootstrap_mode,
    };
    let negatives = scorer::mine_negatives(demos, &bcfg, client, ctx)?;
    let set = scorer::build_scoring_demos(demos, &negatives, bcfg.seed);
    if let Some(p) = &path {
        let empty = ScoringDemoSet { items: Vec::new(), build_seed: bcfg.seed };
        scorer::save_bootstrap(p, &cfg.task_id, &negatives, set.as_ref().unwrap_or(&empty))?;
    }
    Ok((negatives, set))
}

fn split_size_for(cfg: &RunConfig, profile: &TaskProfile) -> usize {
    profile.split_size.map_or(cfg.split_size, |s| s.min(cfg.split_size))
}

/// Runs one method over every split and assembles the report.
///
/// Instances that fail (unparseable output, rejected requests) are recorded
/// and excluded from accuracy. A backend that is unreachable or rate limited
/// past its retries aborts the whole run instead.
pub fn run_experiment(cfg: &RunConfig, deps: &RunDeps<'_>) -> Result<(RunReport, RunStats)> {
    let started = Instant::now();
    cfg.validate()?;
    let profile = deps.library.task(&cfg.task_id)?;
    let counter = ApproxTokenCounter;
    let ctx = PromptContext {
        profile,
        library: deps.library,
        template_set: cfg.template_set.as_deref(),
        token_budget: cfg.token_budget,
        counter: &counter,
    };
    let demos = select_demonstrations(deps.train, cfg.k_demos, cfg.run_seed)?;

    let mut scorer_summary = None;
    let weigher = match (cfg.method.uses_scorer(), cfg.scorer.kind) {
        (false, _) => Weigher::None,
        (true, ScorerKind::Lexical) => {
            scorer_summary = Some(ScorerSummary {
                kind: ScorerKind::Lexical,
                degraded_to_zero_shot: false,
                demo_items: 0,
                instances_with_negatives: 0,
            });
            Weigher::Lexical
        }
        (true, ScorerKind::ZeroShot) => {
            scorer_summary = Some(ScorerSummary {
                kind: ScorerKind::ZeroShot,
                degraded_to_zero_shot: false,
                demo_items: 0,
                instances_with_negatives: 0,
            });
            Weigher::Llm(ScoringDemoSet::zero_shot())
        }
        (true, ScorerKind::Bootstrapped) => {
            let (negatives, set) = bootstrap(cfg, &demos, deps.client, &ctx, deps.bootstrap_dir.as_deref())?;
            let with_neg = negatives.values().filter(|n| !n.is_empty()).count();
            let set = match set {
                Ok(s) => s,
                Err(Error::EmptyDemoSet) => {
                    log::warn!("no demonstration produced a negative explanation; scoring zero-shot");
                    ScoringDemoSet::zero_shot()
                }
                Err(e) => return Err(e),
            };
            scorer_summary = Some(ScorerSummary {
                kind: ScorerKind::Bootstrapped,
                degraded_to_zero_shot: set.is_empty(),
                demo_items: set.items.len(),
                instances_with_negatives: with_neg,
            });
            Weigher::Llm(set)
        }
    };
    let runner = Runner { cfg, client: deps.client, ctx, demos, weigher };
    let splits = make_splits(deps.test.len(), cfg.n_splits, split_size_for(cfg, profile), cfg.run_seed);
    let jobs: Vec<(usize, &DatasetRecord)> =
        splits.iter().enumerate().flat_map(|(s, idx)| idx.iter().map(move |&i| (s, &deps.test[i]))).collect();
    let audits: Vec<InstanceAudit> = jobs
        .par_iter()
        .map(|&(split, record)| {
            let mut audit = InstanceAudit {
                id: record.id().to_string(),
                split,
                gold: record.label.clone(),
                prediction: None,
                correct: false,
                error: None,
                candidates: Vec::new(),
                weights: None,
                aggregation: None,
                conditioned: Vec::new(),
            };
            match runner.instance(record, &mut audit) {
                Ok(p) => {
                    audit.correct = p == record.label;
                    audit.prediction = Some(p);
                }
                Err(Error::Backend(e)) if e.is_exhaustion() => return Err(Error::Backend(e)),
                Err(e) => {
                    log::warn!("instance {} failed: {e}", record.id());
                    audit.error = Some(e.to_string());
                }
            }
            Ok(audit)
        })
        .collect::<Result<_>>()?;

    let report = assemble(cfg.clone(), &runner.demos, &splits, audits, deps.dropped_records, scorer_summary);
    let stats = RunStats { wall_clock_ms: started.elapsed().as_millis(), requests: deps.client.stats() };
    Ok((report, stats))
}

fn assemble(
    config: RunConfig,
    demos: &[Demonstration],
    splits: &[Vec<usize>],
    instances: Vec<InstanceAudit>,
    dropped_records: usize,
    scorer: Option<ScorerSummary>,
) -> RunReport {
    let mut per_split: BTreeMap<usize, (usize, usize, usize)> = BTreeMap::new();
    for a in &instances {
        let e = per_split.entry(a.split).or_default();
        e.0 += 1;
        if a.failed() {
            e.1 += 1;
        } else if a.correct {
            e.2 += 1;
        }
    }
    let split_results: Vec<SplitResult> = (0..splits.len())
        .map(|s| {
            let (size, failures, correct) = per_split.get(&s).copied().unwrap_or_default();
            let scored = size - failures;
            SplitResult { size, failures, accuracy: if scored == 0 { 0.0 } else { correct as f64 / scored as f64 } }
        })
        .collect();
    let split_accuracies: Vec<f64> = split_results.iter().map(|s| s.accuracy).collect();
    let mean_accuracy =
        if split_accuracies.is_empty() { 0.0 } else { split_accuracies.iter().sum::<f64>() / split_accuracies.len() as f64 };
    let with_dist = instances.iter().flat_map(|a| &a.candidates).filter(|c| c.distribution.is_some());
    let (mismatched, total) = aggregate::inconsistency_counts(with_dist);
    let inconsistency_ratio = (total > 0).then(|| mismatched as f64 / total as f64);
    RunReport {
        config,
        demonstrations: demos.iter().map(|d| d.id().to_string()).collect(),
        failures: split_results.iter().map(|s| s.failures).sum(),
        splits: split_results,
        split_accuracies,
        mean_accuracy,
        dropped_records,
        inconsistency_ratio,
        scorer,
        instances,
    }
}

/// Re-derives an instance's final prediction from its audit record using
/// only the aggregation functions.
pub fn recompute_prediction(method: Method, task: &crate::domain::TaskSpec, audit: &InstanceAudit) -> Result<Option<LabelId>> {
    if audit.failed() {
        return Ok(None);
    }
    let weighted = || -> Result<Vec<ScoredCandidate>> {
        let w = audit.weights.as_ref().ok_or_else(|| Error::Config(format!("audit `{}` lacks weights", audit.id)))?;
        scored(&audit.candidates, w)
    };
    let r = match method {
        Method::Icl | Method::Pe | Method::Ep => return Ok(audit.candidates.first().and_then(|c| c.prediction.clone())),
        Method::SelfConsistency => aggregate::majority_vote(task, &audit.candidates)?,
        Method::Ease => aggregate::weighted_soft_aggregate(task, &weighted()?)?,
        Method::EaseNoBls => aggregate::soft_aggregate(task, &audit.candidates)?,
        Method::EaseNoSpa => aggregate::weighted_hard_vote(task, &weighted()?)?,
        Method::HardArgmax => aggregate::hard_argmax_vote(task, &audit.candidates)?,
        Method::Flame => {
            let mass = audit.conditioned.iter().map(|c| c.logprob.exp()).collect::<Vec<_>>();
            let idx = crate::domain::argmax_index(&mass).ok_or_else(|| Error::Config("empty FLamE audit".into()))?;
            return Ok(Some(audit.conditioned[idx].label.clone()));
        }
    };
    Ok(Some(r.prediction))
}
