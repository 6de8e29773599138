//! Candidate generation: N explanation/prediction draws per instance, each
//! paired with the label distribution conditioned on its explanation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{LlmClient, SamplingParams, DEFAULT_TEMPERATURE};
use crate::backend::client::first_word;
use crate::domain::{
    normalize_over_verbalizers, Candidate, Demonstration, InstanceInput, LabelDistribution, LabelId, TaskSpec,
};
use crate::error::{Error, Result};
use crate::prompting::{
    self, explanation_suffix, Mode, PromptTemplate, RenderedPrompt, TaskProfile, TokenCounter, ANSWER_CUE,
    EXPLANATION_CUE,
};
use crate::templates::TemplateLibrary;

pub const DEFAULT_CANDIDATES: u32 = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PipelineMode {
    Pe,
    Ep,
}

impl PipelineMode {
    pub fn prompt_mode(self) -> Mode {
        match self {
            PipelineMode::Pe => Mode::Pe,
            PipelineMode::Ep => Mode::Ep,
        }
    }
}

impl std::str::FromStr for PipelineMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pe" => Ok(PipelineMode::Pe),
            "ep" => Ok(PipelineMode::Ep),
            other => Err(format!("unknown pipeline mode `{other}` (expected ep or pe)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub n_candidates: u32,
    pub temperature: f64,
    pub mode: PipelineMode,
    pub max_tokens: u32,
    /// Drop unparseable candidates instead of keeping them with a uniform
    /// distribution. Off by default so every instance keeps N candidates.
    pub drop_malformed: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_candidates: DEFAULT_CANDIDATES,
            temperature: DEFAULT_TEMPERATURE,
            mode: PipelineMode::Ep,
            max_tokens: 256,
            drop_malformed: false,
        }
    }
}

impl SamplerConfig {
    pub fn greedy(mode: PipelineMode) -> Self {
        Self { n_candidates: 1, temperature: 0.0, mode, ..Self::default() }
    }

    fn params(&self) -> SamplingParams {
        SamplingParams { temperature: self.temperature, max_tokens: self.max_tokens, ..SamplingParams::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_candidates == 0 {
            return Err(Error::Config("n_candidates must be at least 1".into()));
        }
        self.params().validate()?;
        Ok(())
    }
}

/// Everything needed to render prompts for one task.
#[derive(Clone, Copy)]
pub struct PromptContext<'a> {
    pub profile: &'a TaskProfile,
    pub library: &'a TemplateLibrary,
    pub template_set: Option<&'a str>,
    pub token_budget: usize,
    pub counter: &'a dyn TokenCounter,
}

impl<'a> PromptContext<'a> {
    pub fn template(&self, mode: Mode) -> Result<&'a PromptTemplate> {
        Ok(self.library.template(self.profile, self.template_set, mode)?)
    }

    pub fn task(&self) -> &'a TaskSpec {
        &self.profile.spec
    }

    pub fn render(
        &self,
        mode: Mode,
        demos: &[Demonstration],
        query: &InstanceInput,
        suffix: &str,
        seed: u64,
    ) -> Result<RenderedPrompt> {
        Ok(prompting::render_continued(
            self.template(mode)?,
            self.profile,
            demos,
            query,
            suffix,
            seed,
            self.token_budget,
            self.counter,
        )?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedCandidate {
    pub explanation: String,
    pub prediction: Option<LabelId>,
    pub parse_ok: bool,
}

fn answer_label(task: &TaskSpec, text: &str) -> Option<LabelId> {
    first_word(text).and_then(|w| task.label_for_verbalizer(w)).cloned()
}

/// Splits a completion into explanation and predicted label.
///
/// The completion may or may not repeat the cue that ends the prompt
/// (`Explanation:` for EP, `Answer:` for PE); both forms parse the same.
/// The answer is the first alphanumeric token after `Answer:`, matched to a
/// verbalizer ignoring case.
pub fn parse_candidate(raw: &str, mode: PipelineMode, task: &TaskSpec) -> ParsedCandidate {
    let failed = |explanation: String| ParsedCandidate { explanation, prediction: None, parse_ok: false };
    match mode {
        PipelineMode::Ep => {
            let body = raw.rfind(EXPLANATION_CUE).map_or(raw, |i| &raw[i + EXPLANATION_CUE.len()..]);
            let Some(j) = body.find(ANSWER_CUE) else {
                return failed(String::new());
            };
            let explanation = body[..j].trim().to_string();
            match answer_label(task, &body[j + ANSWER_CUE.len()..]) {
                Some(label) => ParsedCandidate { explanation, prediction: Some(label), parse_ok: true },
                None => failed(explanation),
            }
        }
        PipelineMode::Pe => {
            let body = raw.find(ANSWER_CUE).map_or(raw, |i| &raw[i + ANSWER_CUE.len()..]);
            let (answer_part, explanation) = match body.find(EXPLANATION_CUE) {
                Some(k) => (&body[..k], body[k + EXPLANATION_CUE.len()..].trim().to_string()),
                None => (body, String::new()),
            };
            match answer_label(task, answer_part) {
                Some(label) => ParsedCandidate { explanation, prediction: Some(label), parse_ok: true },
                None => failed(String::new()),
            }
        }
    }
}

/// Draws `n_candidates` completions for one rendered prompt and parses them,
/// without soft distributions. Results are in draw order.
pub fn draw_candidates(
    prompt: &RenderedPrompt,
    config: &SamplerConfig,
    task: &TaskSpec,
    client: &LlmClient,
) -> Result<Vec<Candidate>> {
    config.validate()?;
    let params = config.params();
    (0..config.n_candidates)
        .into_par_iter()
        .map(|j| {
            let completion = client.complete(&prompt.text, &params, j)?;
            let parsed = parse_candidate(&completion.text, config.mode, task);
            Ok(Candidate {
                explanation: parsed.explanation,
                prediction: parsed.prediction,
                distribution: None,
                raw_text: completion.text,
                parse_ok: parsed.parse_ok,
            })
        })
        .collect()
}

/// Label distribution conditioned on `explanation`: the explain-then-predict
/// prompt with the explanation filled in and the answer slot left open.
pub fn soft_distribution(
    instance: &InstanceInput,
    demos: &[Demonstration],
    explanation: &str,
    client: &LlmClient,
    ctx: &PromptContext<'_>,
    shuffle_seed: u64,
) -> Result<LabelDistribution> {
    let prompt = ctx.render(Mode::Ep, demos, instance, &explanation_suffix(explanation), shuffle_seed)?;
    let task = ctx.task();
    let logprobs = client.label_logprobs(&prompt.text, &task.verbalizer_pairs())?;
    Ok(normalize_over_verbalizers(task, &logprobs)?)
}

/// Fills in soft distributions; unparseable candidates get a uniform one.
pub fn attach_distributions(
    candidates: Vec<Candidate>,
    instance: &InstanceInput,
    demos: &[Demonstration],
    client: &LlmClient,
    ctx: &PromptContext<'_>,
    shuffle_seed: u64,
) -> Result<Vec<Candidate>> {
    candidates
        .into_par_iter()
        .map(|mut c| {
            c.distribution = Some(if c.parse_ok {
                soft_distribution(instance, demos, &c.explanation, client, ctx, shuffle_seed)?
            } else {
                LabelDistribution::uniform(ctx.task())
            });
            Ok(c)
        })
        .collect()
}

/// Samples N candidates for `instance` and attaches each one's soft
/// distribution.
pub fn sample_candidates(
    instance: &InstanceInput,
    demos: &[Demonstration],
    config: &SamplerConfig,
    client: &LlmClient,
    ctx: &PromptContext<'_>,
    shuffle_seed: u64,
) -> Result<Vec<Candidate>> {
    let prompt = ctx.render(config.mode.prompt_mode(), demos, instance, "", shuffle_seed)?;
    let drawn = draw_candidates(&prompt, config, ctx.task(), client)?;
    if drawn.iter().all(|c| !c.parse_ok) {
        return Err(Error::AllParsesFailed(instance.id.clone()));
    }
    let drawn = if config.drop_malformed { drawn.into_iter().filter(|c| c.parse_ok).collect() } else { drawn };
    attach_distributions(drawn, instance, demos, client, ctx, shuffle_seed)
}
