//! Explanation scoring.
//!
//! The bootstrapped scorer needs negative examples, which few-shot data does
//! not have. They are mined: sample candidates for each training instance
//! from a handful of other training exemplars and keep the explanations
//! whose prediction disagrees with the gold label. The scoring prompt then
//! shows, for every instance that produced at least one negative, its gold
//! explanation answered "Yes" and one mined negative answered "No".

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{LlmClient, DEFAULT_TEMPERATURE};
use crate::domain::{normalize_over_verbalizers, Demonstration, InstanceInput, LabelId};
use crate::error::{Error, Result};
use crate::prompting::{render_score_prompt, Mode};
use crate::rng::{self, instance_seed, SplitMix64};
use crate::sampler::{draw_candidates, PipelineMode, PromptContext, SamplerConfig};
use crate::templates::ScoreVerbalizerSet;

pub const DEFAULT_K_EXEMPLARS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Pos,
    Neg,
}

impl Polarity {
    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Pos => "pos",
            Polarity::Neg => "neg",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringDemo {
    pub input: InstanceInput,
    pub explanation: String,
    pub polarity: Polarity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringDemoSet {
    pub items: Vec<ScoringDemo>,
    pub build_seed: u64,
}

impl ScoringDemoSet {
    /// No demonstrations: the scorer runs zero-shot.
    pub fn zero_shot() -> Self {
        Self { items: Vec::new(), build_seed: 0 }
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn count(&self, polarity: Polarity) -> usize {
        self.items.iter().filter(|d| d.polarity == polarity).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub k_exemplars: usize,
    pub n_mine: u32,
    pub temperature: f64,
    pub seed: u64,
    /// Which pipeline generates the mined candidates.
    pub mode: PipelineMode,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            k_exemplars: DEFAULT_K_EXEMPLARS,
            n_mine: crate::sampler::DEFAULT_CANDIDATES,
            temperature: DEFAULT_TEMPERATURE,
            seed: 0,
            mode: PipelineMode::Ep,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Negative {
    pub explanation: String,
    pub prediction: LabelId,
}

/// Instance id → mined negatives, in draw order.
pub type NegativeMap = BTreeMap<String, Vec<Negative>>;

/// The `k` exemplars used to mine negatives for `train[target]`, never
/// including the target itself.
pub fn mining_exemplars(train: &[Demonstration], target: usize, k: usize, seed: u64) -> Vec<Demonstration> {
    let others: Vec<&Demonstration> =
        train.iter().enumerate().filter(|(i, _)| *i != target).map(|(_, d)| d).collect();
    let pick = rng::permutation(others.len(), instance_seed(seed, "mine-exemplars", train[target].id()));
    pick.into_iter().take(k).map(|i| others[i].clone()).collect()
}

/// Samples `n_mine` candidates for every training instance and keeps the
/// ones whose prediction differs from the gold label.
///
/// Unparseable candidates carry no prediction and are never negatives; a
/// candidate whose explanation equals the gold explanation is skipped too.
pub fn mine_negatives(
    train: &[Demonstration],
    cfg: &BootstrapConfig,
    client: &LlmClient,
    ctx: &PromptContext<'_>,
) -> Result<NegativeMap> {
    if cfg.k_exemplars == 0 {
        return Err(Error::Config("k_exemplars must be at least 1".into()));
    }
    if train.len() < cfg.k_exemplars + 1 {
        return Err(Error::Config(format!(
            "mining with k = {} exemplars needs at least {} training instances, got {}",
            cfg.k_exemplars,
            cfg.k_exemplars + 1,
            train.len()
        )));
    }
    let sampler = SamplerConfig {
        n_candidates: cfg.n_mine,
        temperature: cfg.temperature,
        mode: cfg.mode,
        ..SamplerConfig::default()
    };
    let mined: Vec<(String, Vec<Negative>)> = (0..train.len())
        .into_par_iter()
        .map(|i| {
            let target = &train[i];
            let exemplars = mining_exemplars(train, i, cfg.k_exemplars, cfg.seed);
            let shuffle = instance_seed(cfg.seed, "mine-shuffle", target.id());
            let prompt = ctx.render(cfg.mode.prompt_mode(), &exemplars, &target.input, "", shuffle)?;
            let candidates = draw_candidates(&prompt, &sampler, ctx.task(), client)?;
            let negatives = candidates
                .into_iter()
                .filter_map(|c| match c.prediction {
                    Some(p) if c.parse_ok && p != target.label && c.explanation != target.explanation => {
                        Some(Negative { explanation: c.explanation, prediction: p })
                    }
                    _ => None,
                })
                .collect();
            Ok((target.id().to_string(), negatives))
        })
        .collect::<Result<_>>()?;
    Ok(mined.into_iter().collect())
}

/// Balanced scoring demonstrations: one gold (positive) and one randomly
/// chosen mined (negative) explanation for each instance with negatives,
/// pos/neg interleaved in a seeded instance order.
pub fn build_scoring_demos(train: &[Demonstration], negatives: &NegativeMap, seed: u64) -> Result<ScoringDemoSet> {
    let eligible: Vec<(&Demonstration, &Vec<Negative>)> = train
        .iter()
        .filter_map(|d| negatives.get(d.id()).filter(|n| !n.is_empty()).map(|n| (d, n)))
        .collect();
    if eligible.is_empty() {
        return Err(Error::EmptyDemoSet);
    }
    let order = rng::permutation(eligible.len(), rng::derive_seed(seed, "scoring-demo-order"));
    let mut items = Vec::with_capacity(2 * eligible.len());
    for i in order {
        let (demo, negs) = eligible[i];
        let mut pick = SplitMix64::new(instance_seed(seed, "negative-pick", demo.id()));
        let neg = &negs[pick.below(negs.len() as u64) as usize];
        items.push(ScoringDemo { input: demo.input.clone(), explanation: demo.explanation.clone(), polarity: Polarity::Pos });
        items.push(ScoringDemo { input: demo.input.clone(), explanation: neg.explanation.clone(), polarity: Polarity::Neg });
    }
    Ok(ScoringDemoSet { items, build_seed: seed })
}

/// Probability of the positive verbalizer for `explanation`, normalized
/// over the positive/negative pair. Empty explanations score 0 without a
/// backend call.
#[allow(clippy::too_many_arguments)]
pub fn score_explanation(
    instance: &InstanceInput,
    explanation: &str,
    demo_set: &ScoringDemoSet,
    verbalizers: ScoreVerbalizerSet,
    client: &LlmClient,
    ctx: &PromptContext<'_>,
    shuffle_seed: u64,
) -> Result<f64> {
    if explanation.trim().is_empty() {
        return Ok(0.0);
    }
    let prompt = render_score_prompt(
        ctx.template(Mode::Score)?,
        ctx.profile,
        demo_set,
        instance,
        explanation,
        verbalizers.pair(),
        shuffle_seed,
        ctx.token_budget,
        ctx.counter,
    )?;
    let task = verbalizers.as_task();
    let lp = client.label_logprobs(&prompt.text, &task.verbalizer_pairs())?;
    let d = normalize_over_verbalizers(&task, &lp)?;
    Ok(d.probs()[0].clamp(0.0, 1.0))
}

/// Fixed stoplist for lexical scoring.
pub const STOPWORDS: [&str; 50] = [
    "a", "an", "the", "and", "or", "but", "if", "of", "to", "in", "on", "at", "by", "for", "with", "from", "as",
    "is", "are", "was", "were", "be", "been", "being", "it", "its", "this", "that", "these", "those", "there",
    "he", "she", "they", "them", "his", "her", "their", "we", "you", "i", "not", "no", "do", "does", "did",
    "has", "have", "had", "can",
];

/// Lowercase alphanumeric tokens minus the stoplist.
pub fn content_tokens(text: &str) -> HashSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .filter(|t| !STOPWORDS.contains(&t.as_str()))
        .collect()
}

/// Share of the explanation's content tokens that also occur in the input.
pub fn lexical_score(instance: &InstanceInput, explanation: &str) -> f64 {
    let expl = content_tokens(explanation);
    if expl.is_empty() {
        return 0.0;
    }
    let joined: Vec<&str> = instance.fields.values().map(String::as_str).collect();
    let input = content_tokens(&joined.join(" "));
    expl.intersection(&input).count() as f64 / expl.len() as f64
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum BootstrapLine {
    Meta { task_id: String, build_seed: u64 },
    Negative { instance_id: String, explanation: String, prediction: LabelId },
    Demo(ScoringDemo),
}

/// Writes mined negatives and the demo set as JSONL.
pub fn save_bootstrap(path: &Path, task_id: &str, negatives: &NegativeMap, demos: &ScoringDemoSet) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    }
    let mut out = Vec::new();
    let mut line = |l: &BootstrapLine| {
        serde_json::to_writer(&mut out, l).expect("bootstrap line serializes");
        out.push(b'\n');
    };
    line(&BootstrapLine::Meta { task_id: task_id.to_string(), build_seed: demos.build_seed });
    for (id, negs) in negatives {
        for n in negs {
            line(&BootstrapLine::Negative {
                instance_id: id.clone(),
                explanation: n.explanation.clone(),
                prediction: n.prediction.clone(),
            });
        }
    }
    for d in &demos.items {
        line(&BootstrapLine::Demo(d.clone()));
    }
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path.display().to_string(), e))?;
    tmp.write_all(&out).map_err(|e| Error::io(path.display().to_string(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path.display().to_string(), e.error))?;
    Ok(())
}

/// Reads a file written by [`save_bootstrap`]. Instances that had no
/// negatives do not appear in the returned map.
pub fn load_bootstrap(path: &Path) -> Result<(NegativeMap, ScoringDemoSet)> {
    let f = fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut negatives = NegativeMap::new();
    let mut demos = ScoringDemoSet::zero_shot();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: BootstrapLine = serde_json::from_str(&line)
            .map_err(|e| Error::Config(format!("{}:{}: {e}", path.display(), n + 1)))?;
        match parsed {
            BootstrapLine::Meta { build_seed, .. } => demos.build_seed = build_seed,
            BootstrapLine::Negative { instance_id, explanation, prediction } => {
                negatives.entry(instance_id).or_default().push(Negative { explanation, prediction })
            }
            BootstrapLine::Demo(d) => demos.items.push(d),
        }
    }
    Ok((negatives, demos))
}
