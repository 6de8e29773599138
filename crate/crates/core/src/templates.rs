//! Template manifest: maps task ids to task profiles and template sets.
//!
//! The manifest is JSON. `template_sets` maps a set id to per-mode file
//! paths (relative to the manifest); `tasks` maps a task id to its labels,
//! input fields and default template set. A set that lacks a mode falls
//! back to the task's default set for that mode, so a sensitivity variant
//! only has to provide the file it changes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::domain::{LabelId, TaskSpec};
use crate::prompting::{Mode, PromptError, PromptTemplate, TaskProfile};

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("cannot read `{path}`: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("bad manifest: {0}")]
    Manifest(String),
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("template set `{set}` has no `{mode}` template")]
    MissingTemplate { set: String, mode: Mode },
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

#[derive(Debug, Deserialize)]
struct ManifestFile {
    template_sets: BTreeMap<String, BTreeMap<Mode, String>>,
    tasks: BTreeMap<String, TaskEntry>,
}

#[derive(Debug, Deserialize)]
struct TaskEntry {
    labels: Vec<(String, String)>,
    answer_choices_text: String,
    fields: Vec<String>,
    task_name: String,
    task_input: String,
    template_set: String,
    #[serde(default)]
    explanation_blocklist: Vec<String>,
    #[serde(default)]
    split_size: Option<usize>,
}

const BUILTIN_MANIFEST: &str = include_str!("../templates/manifest.json");

const BUILTIN_FILES: &[(&str, &str)] = &[
    ("esnli/icl.txt", include_str!("../templates/esnli/icl.txt")),
    ("esnli/pe.txt", include_str!("../templates/esnli/pe.txt")),
    ("esnli/ep.txt", include_str!("../templates/esnli/ep.txt")),
    ("esnli/ep_format2.txt", include_str!("../templates/esnli/ep_format2.txt")),
    ("esnli/ep_format3.txt", include_str!("../templates/esnli/ep_format3.txt")),
    ("anli/icl.txt", include_str!("../templates/anli/icl.txt")),
    ("anli/pe.txt", include_str!("../templates/anli/pe.txt")),
    ("anli/ep.txt", include_str!("../templates/anli/ep.txt")),
    ("mcqa/icl.txt", include_str!("../templates/mcqa/icl.txt")),
    ("mcqa/pe.txt", include_str!("../templates/mcqa/pe.txt")),
    ("mcqa/ep.txt", include_str!("../templates/mcqa/ep.txt")),
    ("strategyqa/icl.txt", include_str!("../templates/strategyqa/icl.txt")),
    ("strategyqa/pe.txt", include_str!("../templates/strategyqa/pe.txt")),
    ("strategyqa/ep.txt", include_str!("../templates/strategyqa/ep.txt")),
    ("strategyqa/ep_format2.txt", include_str!("../templates/strategyqa/ep_format2.txt")),
    ("strategyqa/ep_format3.txt", include_str!("../templates/strategyqa/ep_format3.txt")),
    ("score.txt", include_str!("../templates/score.txt")),
];

#[derive(Debug, Clone)]
pub struct TemplateLibrary {
    tasks: BTreeMap<String, TaskProfile>,
    sets: BTreeMap<String, BTreeMap<Mode, PromptTemplate>>,
}

impl TemplateLibrary {
    /// The seven benchmark tasks with templates compiled into the binary.
    pub fn builtin() -> Self {
        Self::from_sources(BUILTIN_MANIFEST, |rel| {
            BUILTIN_FILES
                .iter()
                .find(|(p, _)| *p == rel)
                .map(|(_, s)| s.to_string())
                .ok_or_else(|| TemplateError::Manifest(format!("no builtin template `{rel}`")))
        })
        .expect("builtin templates are valid")
    }

    /// Loads `manifest.json` and the template files it names from `dir`.
    pub fn load(dir: &Path) -> Result<Self, TemplateError> {
        let manifest_path = dir.join("manifest.json");
        let manifest = fs::read_to_string(&manifest_path)
            .map_err(|source| TemplateError::Io { path: manifest_path.clone(), source })?;
        Self::from_sources(&manifest, |rel| {
            let path = dir.join(rel);
            fs::read_to_string(&path).map_err(|source| TemplateError::Io { path, source })
        })
    }

    fn from_sources(
        manifest: &str,
        mut read: impl FnMut(&str) -> Result<String, TemplateError>,
    ) -> Result<Self, TemplateError> {
        let file: ManifestFile =
            serde_json::from_str(manifest).map_err(|e| TemplateError::Manifest(e.to_string()))?;
        let mut sets = BTreeMap::new();
        for (set_id, modes) in &file.template_sets {
            let mut parsed = BTreeMap::new();
            for (mode, rel) in modes {
                parsed.insert(*mode, PromptTemplate::parse(set_id, *mode, &read(rel)?)?);
            }
            sets.insert(set_id.clone(), parsed);
        }
        let mut tasks = BTreeMap::new();
        for (task_id, entry) in file.tasks {
            let pairs: Vec<(&str, &str)> =
                entry.labels.iter().map(|(l, v)| (l.as_str(), v.as_str())).collect();
            let spec = TaskSpec::new(&task_id, &pairs, entry.answer_choices_text, &entry.template_set)
                .map_err(|e| TemplateError::Manifest(e.to_string()))?;
            if !sets.contains_key(&entry.template_set) {
                return Err(TemplateError::Manifest(format!(
                    "task `{task_id}` refers to unknown template set `{}`",
                    entry.template_set
                )));
            }
            tasks.insert(
                task_id,
                TaskProfile {
                    spec,
                    fields: entry.fields,
                    task_name: entry.task_name,
                    task_input: entry.task_input,
                    explanation_blocklist: entry.explanation_blocklist,
                    split_size: entry.split_size,
                },
            );
        }
        let lib = Self { tasks, sets };
        lib.validate()?;
        Ok(lib)
    }

    fn validate(&self) -> Result<(), TemplateError> {
        for profile in self.tasks.values() {
            for mode in Mode::ALL {
                if let Ok(t) = self.template(profile, None, mode) {
                    t.validate_for(profile)?;
                }
            }
        }
        Ok(())
    }

    pub fn task(&self, task_id: &str) -> Result<&TaskProfile, TemplateError> {
        self.tasks.get(task_id).ok_or_else(|| TemplateError::UnknownTask(task_id.to_string()))
    }

    pub fn task_ids(&self) -> impl Iterator<Item = &str> {
        self.tasks.keys().map(String::as_str)
    }

    pub fn set_ids(&self) -> impl Iterator<Item = &str> {
        self.sets.keys().map(String::as_str)
    }

    /// Template for `mode`, looked up in `set` (or the task's default set)
    /// and falling back to the default set when `set` lacks the mode.
    pub fn template(
        &self,
        profile: &TaskProfile,
        set: Option<&str>,
        mode: Mode,
    ) -> Result<&PromptTemplate, TemplateError> {
        let default_set = profile.spec.template_set_id.as_str();
        let chosen = set.unwrap_or(default_set);
        self.sets
            .get(chosen)
            .and_then(|m| m.get(&mode))
            .or_else(|| self.sets.get(default_set).and_then(|m| m.get(&mode)))
            .ok_or_else(|| TemplateError::MissingTemplate { set: chosen.to_string(), mode })
    }
}

/// Scoring verbalizer pairs from the verbalizer study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreVerbalizerSet {
    #[default]
    V1,
    V2,
    V3,
}

impl ScoreVerbalizerSet {
    pub fn pair(self) -> (&'static str, &'static str) {
        match self {
            ScoreVerbalizerSet::V1 => ("Yes", "No"),
            ScoreVerbalizerSet::V2 => ("True", "False"),
            ScoreVerbalizerSet::V3 => ("Foo", "Jaa"),
        }
    }

    /// Binary task whose labels are `good`/`bad` with this set's tokens.
    pub fn as_task(self) -> TaskSpec {
        let (pos, neg) = self.pair();
        TaskSpec {
            task_id: "explanation-quality".into(),
            labels: vec![LabelId::from("good"), LabelId::from("bad")],
            verbalizers: vec![pos.to_string(), neg.to_string()],
            answer_choices_text: format!("{pos} or {neg}"),
            template_set_id: "score".into(),
        }
    }
}

impl std::str::FromStr for ScoreVerbalizerSet {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "v1" => Ok(Self::V1),
            "v2" => Ok(Self::V2),
            "v3" => Ok(Self::V3),
            other => Err(format!("unknown verbalizer set `{other}` (expected v1, v2 or v3)")),
        }
    }
}
