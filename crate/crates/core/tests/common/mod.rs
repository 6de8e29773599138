#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use ease_core::backend::mock::{MockBackend, MockRule, MockScript, Respond, RuleKind};
use ease_core::backend::LlmClient;
use ease_core::domain::{Demonstration, InstanceInput, LabelId};
use ease_core::harness::{DatasetRecord, Method, RunConfig, RunDeps, RunReport, RunStats, ScorerConfig};
use ease_core::prompting::{self, ApproxTokenCounter, Mode, RenderedPrompt};
use ease_core::rng;
use ease_core::scorer::{Polarity, ScoringDemo, ScoringDemoSet};
use ease_core::templates::TemplateLibrary;

pub fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join("golden")
}

/// Golden file contents without the trailing newline the files end with.
pub fn golden(name: &str) -> String {
    let text = std::fs::read_to_string(golden_dir().join(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
    text.strip_suffix('\n').unwrap_or(&text).to_string()
}

fn nli(id: &str, premise: &str, hypothesis: &str) -> InstanceInput {
    InstanceInput::new(id).with("premise", premise).with("hypothesis", hypothesis)
}

fn mcqa(id: &str, question: &str, choices: &str) -> InstanceInput {
    InstanceInput::new(id).with("question", question).with("choices", choices)
}

fn sqa(id: &str, question: &str) -> InstanceInput {
    InstanceInput::new(id).with("question", question)
}

struct GoldenTask {
    task: &'static str,
    prefix: &'static str,
    demo: InstanceInput,
    label: &'static str,
    explanation: &'static str,
    query: InstanceInput,
    /// Score goldens: negative explanation for the demo and the query explanation.
    score: Option<(&'static str, &'static str)>,
    variants: &'static [&'static str],
}

fn golden_tasks() -> Vec<GoldenTask> {
    vec![
        GoldenTask {
            task: "esnli",
            prefix: "esnli",
            demo: nli(
                "esnli-d",
                "A man is working on a computer while two people sit and talk in front.",
                "The two people sat and chatted for a bit while the IT guy removed the virus.",
            ),
            label: "neutral",
            explanation: "There is no evidence that the man is an IT guy, or that he is removing a virus.",
            query: nli(
                "esnli-q",
                "A Seattle firefighter standing in front of his truck.",
                "The man is standing in front of the ambulance.",
            ),
            score: Some(("The two people were sitting and talking.", "Ambulances are not fire trucks.")),
            variants: &["esnli-format2", "esnli-format3"],
        },
        GoldenTask {
            task: "anli_r1",
            prefix: "anli",
            demo: nli(
                "anli-d",
                "Hermione Granger is a fictional character in the Harry Potter books.",
                "Hermione Granger is a real person.",
            ),
            label: "contradiction",
            explanation: "A fictional character is not a real person.",
            query: nli(
                "anli-q",
                "A man is working on a computer while two people sit and talk in front.",
                "Two people are talking.",
            ),
            score: None,
            variants: &[],
        },
        GoldenTask {
            task: "ecqa",
            prefix: "mcqa",
            demo: mcqa(
                "mcqa-d",
                "Where would you find a seat belt?",
                "(A) car (B) kitchen (C) library (D) garden (E) ocean",
            ),
            label: "A",
            explanation: "Seat belts are fitted in cars.",
            query: mcqa("mcqa-q", "What do people use to cut paper?", "(A) spoon (B) scissors (C) pillow (D) rope (E) cup"),
            score: None,
            variants: &[],
        },
        GoldenTask {
            task: "strategyqa",
            prefix: "strategyqa",
            demo: sqa("sqa-d", "Is Hermione Granger eligible for the Order of the British Empire?"),
            label: "false",
            explanation: "Hermione Granger is a fictional character, and the order is only awarded to real people.",
            query: sqa("sqa-q", "Could every citizen of Samoa send a letter to a unique JPMorgan Chase employee?"),
            score: Some((
                "Hermione Granger is a British citizen.",
                "Samoa has about 195,000 people and JPMorgan Chase has about 250,000 employees.",
            )),
            variants: &["strategyqa-format2", "strategyqa-format3"],
        },
    ]
}

/// A seed under which a two-item prompt keeps its input order.
fn identity_seed() -> u64 {
    (0u64..).find(|&s| rng::permutation(2, s) == vec![0, 1]).expect("some seed keeps order")
}

/// Every golden file name with the prompt the library renders for it.
pub fn golden_cases() -> Vec<(String, RenderedPrompt)> {
    let lib = TemplateLibrary::builtin();
    let counter = ApproxTokenCounter;
    let mut out = Vec::new();
    for g in golden_tasks() {
        let profile = lib.task(g.task).unwrap();
        let demo = Demonstration::new(&profile.spec, g.demo.clone(), g.explanation, LabelId::from(g.label)).unwrap();
        let demos = [demo];
        for (mode, suffix) in [(Mode::Icl, "icl"), (Mode::Pe, "pe"), (Mode::Ep, "ep")] {
            let t = lib.template(profile, None, mode).unwrap();
            let p = prompting::render(t, profile, &demos, &g.query, 3, 8192, &counter).unwrap();
            out.push((format!("{}_{suffix}.txt", g.prefix), p));
        }
        for (i, set) in g.variants.iter().enumerate() {
            let t = lib.template(profile, Some(set), Mode::Ep).unwrap();
            let p = prompting::render(t, profile, &demos, &g.query, 3, 8192, &counter).unwrap();
            out.push((format!("{}_ep_format{}.txt", g.prefix, i + 2), p));
        }
        if let Some((negative, query_expl)) = g.score {
            let set = ScoringDemoSet {
                items: vec![
                    ScoringDemo { input: g.demo.clone(), explanation: g.explanation.into(), polarity: Polarity::Pos },
                    ScoringDemo { input: g.demo.clone(), explanation: negative.into(), polarity: Polarity::Neg },
                ],
                build_seed: 0,
            };
            let t = lib.template(profile, None, Mode::Score).unwrap();
            let p = prompting::render_score_prompt(
                t,
                profile,
                &set,
                &g.query,
                query_expl,
                ("Yes", "No"),
                identity_seed(),
                8192,
                &counter,
            )
            .unwrap();
            out.push((format!("{}_score.txt", g.prefix), p));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Synthetic StrategyQA world for end-to-end runs.
//
// Eight training questions and twenty test questions. Every test question
// gets nine scripted candidates whose explanation text carries two tags:
// `sN` fixes the scorer's P(Yes) at N/10 and `pNN` fixes the conditioned
// P(True) at NN/100. Questions 0-3 have a wrong majority that the scores
// correct, 4-7 a wrong majority whose soft distributions lean correct, the
// rest are easy.

pub const WORLD_TRAIN: usize = 8;
pub const WORLD_TEST: usize = 20;

fn verb(truth: bool) -> &'static str {
    if truth {
        "True"
    } else {
        "False"
    }
}

fn label(truth: bool) -> LabelId {
    LabelId::from(if truth { "true" } else { "false" })
}

pub fn world_gold(i: usize) -> bool {
    i.is_multiple_of(2)
}

pub fn world_train() -> Vec<DatasetRecord> {
    (0..WORLD_TRAIN)
        .map(|i| {
            let truth = i % 2 == 1;
            DatasetRecord {
                input: sqa(&format!("train-{i}"), &format!("Train item {i}: is statement {i} correct?")),
                label: label(truth),
                explanation: Some(format!("Statement {i} is {}.", if truth { "correct" } else { "wrong" })),
            }
        })
        .collect()
}

pub fn world_test() -> Vec<DatasetRecord> {
    (0..WORLD_TEST)
        .map(|i| DatasetRecord {
            input: sqa(&format!("test-{i:02}"), &format!("Test item {i:02}: does fact {i} hold?")),
            label: label(world_gold(i)),
            explanation: None,
        })
        .collect()
}

/// (prediction, P(True) percent, score tenths) for draw `j` of test item `i`.
fn world_candidate(i: usize, j: usize) -> (bool, u32, u32) {
    let g = world_gold(i);
    let pct = |p_gold: u32| if g { p_gold } else { 100 - p_gold };
    let right = j % 2 == 1;
    match i {
        0..=3 if right => (g, pct(80), 9),
        0..=3 => (!g, pct(20), 2),
        4..=7 if right => (g, pct(90), 5),
        4..=7 => (!g, pct(55), 6),
        _ => (g, pct(90), 8),
    }
}

pub fn world_script() -> MockScript {
    let mut script = MockScript::new(Respond::text(" Unscripted."));
    for s in [2, 5, 6, 8, 9] {
        let yes = f64::from(s) / 10.0;
        script = script.rule(
            MockRule::new(&format!(r"good one for the given [^\n]*\nExplanation: Cue s{s} [^\n]*\nAnswer:$"))
                .unwrap()
                .kind(RuleKind::Logprobs)
                .respond(Respond::probs(&[("Yes", yes), ("No", 1.0 - yes)])),
        );
    }
    for p in [10, 20, 45, 55, 80, 90] {
        let t = f64::from(p) / 100.0;
        script = script.rule(
            MockRule::new(&format!(r"\nExplanation: Cue s\d p{p} [^\n]*\nAnswer:$"))
                .unwrap()
                .kind(RuleKind::Logprobs)
                .respond(Respond::probs(&[("True", t), ("False", 1.0 - t)])),
        );
    }
    for i in 0..WORLD_TEST {
        let texts: Vec<String> = (0..9)
            .map(|j| {
                let (pred, p, s) = world_candidate(i, j);
                format!(" Cue s{s} p{p} for item {i:02} draw {j}.\nAnswer: {}", verb(pred))
            })
            .collect();
        script = script.rule(
            MockRule::new(&format!(r"Test item {i:02}:[^\n]*\nExplanation:$"))
                .unwrap()
                .kind(RuleKind::Completion)
                .respond(Respond::sequence(texts)),
        );
    }
    let mined: Vec<String> = (0..9)
        .map(|j| format!(" Mined reason {j}.\nAnswer: {}", verb(j % 2 == 0)))
        .collect();
    script.rule(
        MockRule::new(r"Train item \d+:[^\n]*\nExplanation:$")
            .unwrap()
            .kind(RuleKind::Completion)
            .respond(Respond::sequence(mined)),
    )
}

pub fn world_config(method: Method) -> RunConfig {
    RunConfig {
        task_id: "strategyqa".into(),
        method,
        k_demos: WORLD_TRAIN,
        n_candidates: 9,
        temperature: 0.7,
        n_splits: 2,
        split_size: 10,
        run_seed: 7,
        backend: "mock".into(),
        model: "mock".into(),
        scorer: ScorerConfig { k_exemplars: 4, ..ScorerConfig::default() },
        template_set: None,
        token_budget: 8192,
    }
}

pub struct World {
    pub library: TemplateLibrary,
    pub backend: Arc<MockBackend>,
    pub client: LlmClient,
    pub train: Vec<DatasetRecord>,
    pub test: Vec<DatasetRecord>,
}

impl World {
    pub fn new() -> Self {
        let backend = Arc::new(MockBackend::new(world_script()));
        Self {
            library: TemplateLibrary::builtin(),
            client: LlmClient::new(backend.clone()),
            backend,
            train: world_train(),
            test: world_test(),
        }
    }

    pub fn run(&self, method: Method) -> (RunReport, RunStats) {
        let deps = RunDeps {
            library: &self.library,
            client: &self.client,
            train: &self.train,
            test: &self.test,
            dropped_records: 0,
            bootstrap_dir: None,
        };
        ease_core::harness::run_experiment(&world_config(method), &deps).unwrap()
    }
}

pub fn write_jsonl(path: &std::path::Path, records: &[DatasetRecord]) {
    let lines: Vec<String> = records
        .iter()
        .map(|r| {
            let mut obj = serde_json::Map::new();
            obj.insert("id".into(), r.id().into());
            for (k, v) in &r.input.fields {
                obj.insert(k.clone(), v.clone().into());
            }
            obj.insert("label".into(), r.label.as_str().into());
            if let Some(e) = &r.explanation {
                obj.insert("explanation".into(), e.clone().into());
            }
            serde_json::Value::Object(obj).to_string()
        })
        .collect();
    std::fs::write(path, lines.join("\n") + "\n").unwrap();
}
