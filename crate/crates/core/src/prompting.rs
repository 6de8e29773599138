//! Prompt rendering for the ICL, predict-then-explain, explain-then-predict
//! and scoring formats.
//!
//! A prompt is `instruction`, a blank line, each demonstration block
//! followed by a blank line, then the query block. Demonstrations are
//! permuted with a seeded Fisher–Yates shuffle and packed front to back;
//! the first demonstration that does not fit the token budget ends the
//! packing.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Demonstration, InstanceInput, TaskSpec};
use crate::rng;
use crate::scorer::{Polarity, ScoringDemoSet};

pub const EXPLANATION_CUE: &str = "Explanation:";
pub const ANSWER_CUE: &str = "Answer:";
pub const DEMO_MARKER: &str = "# demonstrations";
pub const QUERY_MARKER: &str = "# test examples";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PromptError {
    #[error("prompt needs {needed} tokens without any demonstrations but the budget is {budget}")]
    BudgetTooSmall { needed: usize, budget: usize },
    #[error("instance `{instance}` has no field `{field}`")]
    MissingPlaceholder { instance: String, field: String },
    #[error("template `{template}` uses undeclared placeholder `{name}`")]
    UnknownPlaceholder { template: String, name: String },
    #[error("malformed template `{template}`: {reason}")]
    Malformed { template: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Icl,
    Pe,
    Ep,
    Score,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Icl, Mode::Pe, Mode::Ep, Mode::Score];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Icl => "icl",
            Mode::Pe => "pe",
            Mode::Ep => "ep",
            Mode::Score => "score",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "icl" => Ok(Mode::Icl),
            "pe" => Ok(Mode::Pe),
            "ep" => Ok(Mode::Ep),
            "score" => Ok(Mode::Score),
            other => Err(format!("unknown prompt mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Text(String),
    Slot(String),
}

/// `{name}` placeholders; `{{` and `}}` are literal braces.
fn parse_segments(template: &str, src: &str) -> Result<Vec<Segment>, PromptError> {
    let mut out = Vec::new();
    let mut text = String::new();
    let mut chars = src.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '{' if chars.peek() == Some(&'{') => {
                chars.next();
                text.push('{');
            }
            '}' if chars.peek() == Some(&'}') => {
                chars.next();
                text.push('}');
            }
            '{' => {
                let mut name = String::new();
                loop {
                    match chars.next() {
                        Some('}') => break,
                        Some(ch) if ch.is_alphanumeric() || ch == '_' => name.push(ch),
                        _ => {
                            return Err(PromptError::Malformed {
                                template: template.to_string(),
                                reason: format!("unterminated or invalid placeholder after `{{{name}`"),
                            })
                        }
                    }
                }
                if !text.is_empty() {
                    out.push(Segment::Text(std::mem::take(&mut text)));
                }
                out.push(Segment::Slot(name));
            }
            '}' => {
                return Err(PromptError::Malformed {
                    template: template.to_string(),
                    reason: "stray `}`".into(),
                })
            }
            _ => text.push(c),
        }
    }
    if !text.is_empty() {
        out.push(Segment::Text(text));
    }
    Ok(out)
}

fn fill(
    template: &str,
    src: &str,
    ctx: &BTreeMap<String, String>,
    instance: &str,
) -> Result<String, PromptError> {
    let mut out = String::with_capacity(src.len() + 64);
    for seg in parse_segments(template, src)? {
        match seg {
            Segment::Text(t) => out.push_str(&t),
            Segment::Slot(name) => match ctx.get(&name) {
                Some(v) => out.push_str(v),
                None => {
                    return Err(PromptError::MissingPlaceholder {
                        instance: instance.to_string(),
                        field: name,
                    })
                }
            },
        }
    }
    Ok(out)
}

/// Placeholder names used in `src`.
pub fn placeholders(src: &str) -> Result<BTreeSet<String>, PromptError> {
    Ok(parse_segments("<inline>", src)?
        .into_iter()
        .filter_map(|s| match s {
            Segment::Slot(n) => Some(n),
            Segment::Text(_) => None,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub template_set_id: String,
    pub mode: Mode,
    pub instruction_text: String,
    pub demo_block: String,
    pub query_block: String,
}

impl PromptTemplate {
    /// Parses the on-disk layout: instruction, a `# demonstrations ...`
    /// marker line, the demonstration block, a `# test examples` marker
    /// line, and the query block. Blank lines around blocks are dropped;
    /// trailing spaces inside lines are kept.
    pub fn parse(template_set_id: &str, mode: Mode, text: &str) -> Result<Self, PromptError> {
        let name = format!("{template_set_id}/{mode}");
        let lines: Vec<&str> = text.split('\n').map(|l| l.strip_suffix('\r').unwrap_or(l)).collect();
        let demo_at = lines.iter().position(|l| l.starts_with(DEMO_MARKER));
        let query_at = lines.iter().position(|l| l.starts_with(QUERY_MARKER));
        let (demo_at, query_at) = match (demo_at, query_at) {
            (Some(d), Some(q)) if d < q => (d, q),
            _ => {
                return Err(PromptError::Malformed {
                    template: name,
                    reason: format!("expected `{DEMO_MARKER}` followed by `{QUERY_MARKER}` marker lines"),
                })
            }
        };
        let block = |ls: &[&str]| {
            let mut ls = ls.to_vec();
            while ls.first().is_some_and(|l| l.trim().is_empty()) {
                ls.remove(0);
            }
            while ls.last().is_some_and(|l| l.trim().is_empty()) {
                ls.pop();
            }
            ls.join("\n")
        };
        let tpl = Self {
            template_set_id: template_set_id.to_string(),
            mode,
            instruction_text: block(&lines[..demo_at]),
            demo_block: block(&lines[demo_at + 1..query_at]),
            query_block: block(&lines[query_at + 1..]),
        };
        if tpl.query_block.is_empty() {
            return Err(PromptError::Malformed { template: name, reason: "empty query block".into() });
        }
        if mode == Mode::Score && !placeholders(&tpl.query_block)?.contains("explanation") {
            return Err(PromptError::Malformed {
                template: name,
                reason: "scoring query must show the explanation under review".into(),
            });
        }
        Ok(tpl)
    }

    pub fn name(&self) -> String {
        format!("{}/{}", self.template_set_id, self.mode)
    }

    /// Checks every placeholder against the names a task can supply.
    pub fn validate_for(&self, profile: &TaskProfile) -> Result<(), PromptError> {
        let fields: BTreeSet<String> = profile.fields.iter().cloned().collect();
        let mut instruction_ok: BTreeSet<String> = ["task_name".to_string()].into();
        let (demo_ok, query_ok): (BTreeSet<String>, BTreeSet<String>) = match self.mode {
            Mode::Score => {
                let base: BTreeSet<String> =
                    ["task_input", "task_name", "explanation"].iter().map(|s| s.to_string()).collect();
                let mut demo = base.clone();
                demo.insert("answer".into());
                (demo, base)
            }
            _ => {
                let mut demo = fields.clone();
                demo.insert("explanation".into());
                demo.insert("answer".into());
                (demo, fields.clone())
            }
        };
        instruction_ok.extend(fields);
        for (src, ok) in [
            (&self.instruction_text, &instruction_ok),
            (&self.demo_block, &demo_ok),
            (&self.query_block, &query_ok),
        ] {
            for name in placeholders(src)? {
                if !ok.contains(&name) {
                    return Err(PromptError::UnknownPlaceholder { template: self.name(), name });
                }
            }
        }
        Ok(())
    }
}

/// A task together with the prompt-side facts the templates need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskProfile {
    pub spec: TaskSpec,
    /// Input fields every instance must carry.
    pub fields: Vec<String>,
    /// Human-readable task name used by the scoring prompt.
    pub task_name: String,
    /// How instance fields are flattened into the scoring prompt's input slot.
    pub task_input: String,
    /// Case-insensitive phrases that disqualify a record's explanation.
    #[serde(default)]
    pub explanation_blocklist: Vec<String>,
    #[serde(default)]
    pub split_size: Option<usize>,
}

impl TaskProfile {
    pub fn check_input(&self, input: &InstanceInput) -> Result<(), PromptError> {
        for f in &self.fields {
            if input.field(f).is_none() {
                return Err(PromptError::MissingPlaceholder {
                    instance: input.id.clone(),
                    field: f.clone(),
                });
            }
        }
        Ok(())
    }

    pub fn render_task_input(&self, input: &InstanceInput) -> Result<String, PromptError> {
        fill("task_input", &self.task_input, &input.fields, &input.id)
    }

    fn base_context(&self, input: &InstanceInput) -> BTreeMap<String, String> {
        let mut ctx = input.fields.clone();
        ctx.insert("task_name".into(), self.task_name.clone());
        ctx
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub text: String,
    pub demos_used: Vec<String>,
    pub mode: Mode,
    pub shuffle_seed: u64,
}

pub trait TokenCounter: Sync {
    fn count(&self, text: &str) -> usize;
}

impl<F: Fn(&str) -> usize + Sync> TokenCounter for F {
    fn count(&self, text: &str) -> usize {
        self(text)
    }
}

/// One token per Unicode scalar value.
#[derive(Debug, Clone, Copy, Default)]
pub struct CharCounter;

impl TokenCounter for CharCounter {
    fn count(&self, text: &str) -> usize {
        text.chars().count()
    }
}

/// Rough BPE estimate: one token per four bytes, rounded up.
#[derive(Debug, Clone, Copy, Default)]
pub struct ApproxTokenCounter;

impl TokenCounter for ApproxTokenCounter {
    fn count(&self, text: &str) -> usize {
        text.len().div_ceil(4)
    }
}

fn assemble(instruction: &str, demos: &[String], query: &str) -> String {
    let mut s = String::with_capacity(
        instruction.len() + demos.iter().map(|d| d.len() + 2).sum::<usize>() + query.len() + 2,
    );
    if !instruction.is_empty() {
        s.push_str(instruction);
        s.push_str("\n\n");
    }
    for d in demos {
        s.push_str(d);
        s.push_str("\n\n");
    }
    s.push_str(query);
    s
}

struct Job<'a> {
    template: &'a PromptTemplate,
    instruction: String,
    /// (id, rendered block) in input order.
    demos: Vec<(String, String)>,
    query: String,
    seed: u64,
    budget: usize,
    counter: &'a dyn TokenCounter,
}

impl Job<'_> {
    fn pack(self) -> Result<RenderedPrompt, PromptError> {
        let order = rng::permutation(self.demos.len(), self.seed);
        let needed = self.counter.count(&assemble(&self.instruction, &[], &self.query));
        if needed > self.budget {
            return Err(PromptError::BudgetTooSmall { needed, budget: self.budget });
        }
        let mut kept: Vec<String> = Vec::new();
        let mut ids = Vec::new();
        for i in order {
            let (id, block) = &self.demos[i];
            kept.push(block.clone());
            if self.counter.count(&assemble(&self.instruction, &kept, &self.query)) > self.budget {
                kept.pop();
                break;
            }
            ids.push(id.clone());
        }
        Ok(RenderedPrompt {
            text: assemble(&self.instruction, &kept, &self.query),
            demos_used: ids,
            mode: self.template.mode,
            shuffle_seed: self.seed,
        })
    }
}

fn demo_block(
    template: &PromptTemplate,
    profile: &TaskProfile,
    demo: &Demonstration,
) -> Result<String, PromptError> {
    let mut ctx = profile.base_context(&demo.input);
    ctx.insert("explanation".into(), demo.explanation.clone());
    let answer = profile.spec.verbalizer(&demo.label).ok_or_else(|| PromptError::MissingPlaceholder {
        instance: demo.input.id.clone(),
        field: "answer".into(),
    })?;
    ctx.insert("answer".into(), answer.to_string());
    fill(&template.name(), &template.demo_block, &ctx, &demo.input.id)
}

/// Renders a task prompt. `suffix` is appended verbatim after the query
/// block and counts against the budget.
#[allow(clippy::too_many_arguments)]
pub fn render_continued(
    template: &PromptTemplate,
    profile: &TaskProfile,
    demos: &[Demonstration],
    query: &InstanceInput,
    suffix: &str,
    shuffle_seed: u64,
    token_budget: usize,
    token_counter: &dyn TokenCounter,
) -> Result<RenderedPrompt, PromptError> {
    profile.check_input(query)?;
    let ctx = profile.base_context(query);
    let mut query_text = fill(&template.name(), &template.query_block, &ctx, &query.id)?;
    query_text.push_str(suffix);
    let demos = demos
        .iter()
        .map(|d| Ok((d.input.id.clone(), demo_block(template, profile, d)?)))
        .collect::<Result<Vec<_>, PromptError>>()?;
    Job {
        template,
        instruction: fill(&template.name(), &template.instruction_text, &ctx, &query.id)?,
        demos,
        query: query_text,
        seed: shuffle_seed,
        budget: token_budget,
        counter: token_counter,
    }
    .pack()
}

pub fn render(
    template: &PromptTemplate,
    profile: &TaskProfile,
    demos: &[Demonstration],
    query: &InstanceInput,
    shuffle_seed: u64,
    token_budget: usize,
    token_counter: &dyn TokenCounter,
) -> Result<RenderedPrompt, PromptError> {
    render_continued(template, profile, demos, query, "", shuffle_seed, token_budget, token_counter)
}

/// Suffix that fills an explain-then-predict query with a given explanation
/// and leaves the answer slot open.
pub fn explanation_suffix(explanation: &str) -> String {
    format!(" {}\n{ANSWER_CUE}", explanation.trim())
}

/// Suffix that fixes the answer of a predict-then-explain query and opens
/// the explanation slot.
pub fn label_conditioned_suffix(verbalizer: &str) -> String {
    format!(" {verbalizer}\n{EXPLANATION_CUE}")
}

/// Verbalizer pair for the scorer, `(positive, negative)`.
pub type ScoreVerbalizers<'a> = (&'a str, &'a str);

#[allow(clippy::too_many_arguments)]
pub fn render_score_prompt(
    template: &PromptTemplate,
    profile: &TaskProfile,
    scoring_demos: &ScoringDemoSet,
    query_input: &InstanceInput,
    explanation: &str,
    verbalizers: ScoreVerbalizers<'_>,
    shuffle_seed: u64,
    token_budget: usize,
    token_counter: &dyn TokenCounter,
) -> Result<RenderedPrompt, PromptError> {
    if template.mode != Mode::Score {
        return Err(PromptError::Malformed {
            template: template.name(),
            reason: "scoring prompts need a score-mode template".into(),
        });
    }
    profile.check_input(query_input)?;
    let name = template.name();
    let context = |input: &InstanceInput, expl: &str| -> Result<BTreeMap<String, String>, PromptError> {
        let mut ctx = BTreeMap::new();
        ctx.insert("task_name".to_string(), profile.task_name.clone());
        ctx.insert("task_input".to_string(), profile.render_task_input(input)?);
        ctx.insert("explanation".to_string(), expl.to_string());
        Ok(ctx)
    };
    let demos = scoring_demos
        .items
        .iter()
        .enumerate()
        .map(|(i, item)| {
            let mut ctx = context(&item.input, &item.explanation)?;
            let answer = match item.polarity {
                Polarity::Pos => verbalizers.0,
                Polarity::Neg => verbalizers.1,
            };
            ctx.insert("answer".into(), answer.to_string());
            let id = format!("{}#{}:{}", item.input.id, i, item.polarity.as_str());
            Ok((id, fill(&name, &template.demo_block, &ctx, &item.input.id)?))
        })
        .collect::<Result<Vec<_>, PromptError>>()?;
    let qctx = context(query_input, explanation)?;
    Job {
        template,
        instruction: fill(&name, &template.instruction_text, &qctx, &query_input.id)?,
        demos,
        query: fill(&name, &template.query_block, &qctx, &query_input.id)?,
        seed: shuffle_seed,
        budget: token_budget,
        counter: token_counter,
    }
    .pack()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::LabelId;

    const TPL: &str = "Instruction here.\n\n# demonstrations (no more than 48)\nQ: {q} \nExplanation: {explanation}\nAnswer: {answer}\n\n# test examples\nQ: {q} \nExplanation:\n";

    fn profile() -> TaskProfile {
        TaskProfile {
            spec: TaskSpec::new("toy", &[("yes", "Yes"), ("no", "No")], "Yes or No", "toy").unwrap(),
            fields: vec!["q".into()],
            task_name: "toy".into(),
            task_input: "{q}".into(),
            explanation_blocklist: vec![],
            split_size: None,
        }
    }

    fn demo(i: usize) -> Demonstration {
        Demonstration {
            input: InstanceInput::new(format!("d{i}")).with("q", format!("question {i}")),
            explanation: format!("because {i}"),
            label: LabelId::from(if i.is_multiple_of(2) { "yes" } else { "no" }),
        }
    }

    #[test]
    fn parse_keeps_trailing_spaces() {
        let t = PromptTemplate::parse("toy", Mode::Ep, TPL).unwrap();
        assert_eq!(t.instruction_text, "Instruction here.");
        assert_eq!(t.demo_block, "Q: {q} \nExplanation: {explanation}\nAnswer: {answer}");
        assert_eq!(t.query_block, "Q: {q} \nExplanation:");
        t.validate_for(&profile()).unwrap();
    }

    #[test]
    fn parse_rejects_missing_markers() {
        assert!(PromptTemplate::parse("x", Mode::Icl, "just text").is_err());
        assert!(PromptTemplate::parse("x", Mode::Icl, "# test examples\nq\n# demonstrations\nd").is_err());
    }

    #[test]
    fn unknown_placeholder_rejected() {
        let t = PromptTemplate::parse("toy", Mode::Ep, &TPL.replace("{q} \nExplanation:\n", "{nope}\n")).unwrap();
        assert!(matches!(t.validate_for(&profile()), Err(PromptError::UnknownPlaceholder { .. })));
    }

    #[test]
    fn brace_escapes() {
        let segs = parse_segments("t", "a {{b}} {c}").unwrap();
        assert_eq!(segs, vec![Segment::Text("a {b} ".into()), Segment::Slot("c".into())]);
        assert!(parse_segments("t", "a {b").is_err());
        assert!(parse_segments("t", "a } b").is_err());
    }

    #[test]
    fn zero_demos_is_instruction_plus_query() {
        let t = PromptTemplate::parse("toy", Mode::Ep, TPL).unwrap();
        let q = InstanceInput::new("q1").with("q", "Is it?");
        let r = render(&t, &profile(), &[], &q, 1, 10_000, &CharCounter).unwrap();
        assert_eq!(r.text, "Instruction here.\n\nQ: Is it? \nExplanation:");
        assert!(r.demos_used.is_empty());
    }

    #[test]
    fn missing_query_field() {
        let t = PromptTemplate::parse("toy", Mode::Ep, TPL).unwrap();
        let q = InstanceInput::new("q1");
        assert_eq!(
            render(&t, &profile(), &[], &q, 1, 10_000, &CharCounter),
            Err(PromptError::MissingPlaceholder { instance: "q1".into(), field: "q".into() })
        );
    }

    #[test]
    fn budget_too_small() {
        let t = PromptTemplate::parse("toy", Mode::Ep, TPL).unwrap();
        let q = InstanceInput::new("q1").with("q", "Is it?");
        assert!(matches!(
            render(&t, &profile(), &[demo(0)], &q, 1, 5, &CharCounter),
            Err(PromptError::BudgetTooSmall { .. })
        ));
    }

    #[test]
    fn packing_keeps_prefix_of_shuffled_order() {
        // Oracle: rebuild each demo block and the base text by hand and sum
        // character counts; blocks are separated by a blank line (2 chars).
        let t = PromptTemplate::parse("toy", Mode::Ep, TPL).unwrap();
        let q = InstanceInput::new("q1").with("q", "Is it?");
        let demos: Vec<_> = (0..10).map(demo).collect();
        let order = rng::permutation(10, 99);
        let block_len = |i: usize| {
            let ans = if i.is_multiple_of(2) { "Yes" } else { "No" };
            format!("Q: question {i} \nExplanation: because {i}\nAnswer: {ans}").chars().count() + 2
        };
        let base = "Instruction here.\n\nQ: Is it? \nExplanation:".chars().count();
        let three: usize = base + order[..3].iter().map(|&i| block_len(i)).sum::<usize>();
        let r = render(&t, &profile(), &demos, &q, 99, three, &CharCounter).unwrap();
        let expected: Vec<String> = order[..3].iter().map(|i| format!("d{i}")).collect();
        assert_eq!(r.demos_used, expected);
        assert_eq!(r.text.chars().count(), three);
        let r = render(&t, &profile(), &demos, &q, 99, three + block_len(order[3]) - 1, &CharCounter).unwrap();
        assert_eq!(r.demos_used.len(), 3);
    }

    #[test]
    fn explanation_suffix_opens_answer_slot() {
        let t = PromptTemplate::parse("toy", Mode::Ep, TPL).unwrap();
        let q = InstanceInput::new("q1").with("q", "Is it?");
        let r = render_continued(
            &t,
            &profile(),
            &[],
            &q,
            &explanation_suffix("It is. "),
            0,
            10_000,
            &CharCounter,
        )
        .unwrap();
        assert!(r.text.ends_with("Explanation: It is.\nAnswer:"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn deterministic_and_permutation(seed in any::<u64>(), n in 0usize..12) {
                let t = PromptTemplate::parse("toy", Mode::Ep, TPL).unwrap();
                let q = InstanceInput::new("q").with("q", "x");
                let demos: Vec<_> = (0..n).map(demo).collect();
                let a = render(&t, &profile(), &demos, &q, seed, usize::MAX, &CharCounter).unwrap();
                let b = render(&t, &profile(), &demos, &q, seed, usize::MAX, &CharCounter).unwrap();
                prop_assert_eq!(&a, &b);
                let mut used = a.demos_used.clone();
                used.sort();
                let mut all: Vec<String> = demos.iter().map(|d| d.input.id.clone()).collect();
                all.sort();
                prop_assert_eq!(used, all);
            }

            #[test]
            fn packing_is_monotone(seed in any::<u64>(), lo in 40usize..600, extra in 0usize..400) {
                let t = PromptTemplate::parse("toy", Mode::Ep, TPL).unwrap();
                let q = InstanceInput::new("q").with("q", "x");
                let demos: Vec<_> = (0..12).map(demo).collect();
                let small = render(&t, &profile(), &demos, &q, seed, lo, &CharCounter).unwrap();
                let big = render(&t, &profile(), &demos, &q, seed, lo + extra, &CharCounter).unwrap();
                prop_assert!(big.demos_used.len() >= small.demos_used.len());
                prop_assert_eq!(&big.demos_used[..small.demos_used.len()], &small.demos_used[..]);
            }
        }
    }
}
