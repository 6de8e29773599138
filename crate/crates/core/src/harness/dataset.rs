//! JSONL datasets and test splits.
//!
//! One record per line: `id`, `label`, optional `explanation`, and one
//! string per input field the task's manifest entry lists, e.g.
//!
//! ```text
//! {"id": "e1", "premise": "...", "hypothesis": "...", "label": "neutral", "explanation": "..."}
//! ```
//!
//! `label` may be the label id or its verbalizer (`"Maybe"` for neutral).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::domain::{Demonstration, InstanceInput, LabelId};
use crate::prompting::TaskProfile;
use crate::rng;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Schema { path: PathBuf, line: usize, field: Option<String>, message: String },
    #[error("{path}:{line}: unknown label `{label}`")]
    UnknownLabel { path: PathBuf, line: usize, label: String },
    #[error("{path}:{line}: duplicate id `{id}`")]
    DuplicateId { path: PathBuf, line: usize, id: String },
    #[error("record `{0}` has no explanation and cannot serve as a demonstration")]
    MissingExplanation(String),
    #[error("dataset is empty")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub input: InstanceInput,
    pub label: LabelId,
    pub explanation: Option<String>,
}

impl DatasetRecord {
    pub fn id(&self) -> &str {
        &self.input.id
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LoadedDataset {
    pub records: Vec<DatasetRecord>,
    /// Records removed by the task's explanation blocklist.
    pub dropped: usize,
}

fn schema(path: &Path, line: usize, field: Option<&str>, message: impl Into<String>) -> DatasetError {
    DatasetError::Schema { path: path.to_path_buf(), line, field: field.map(str::to_string), message: message.into() }
}

fn string_field(obj: &Map<String, Value>, name: &str, path: &Path, line: usize) -> Result<Option<String>, DatasetError> {
    match obj.get(name) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(Value::Number(n)) => Ok(Some(n.to_string())),
        Some(Value::Bool(b)) => Ok(Some(b.to_string())),
        Some(_) => Err(schema(path, line, Some(name), format!("field `{name}` must be a string"))),
    }
}

fn blocked(profile: &TaskProfile, explanation: &str) -> bool {
    let lower = explanation.to_lowercase();
    profile.explanation_blocklist.iter().any(|p| lower.contains(&p.to_lowercase()))
}

/// Parses JSONL text. `path` is only used in error messages.
pub fn parse_dataset(text: &str, path: &Path, profile: &TaskProfile) -> Result<LoadedDataset, DatasetError> {
    let mut out = LoadedDataset::default();
    let mut seen = std::collections::HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(raw).map_err(|e| schema(path, line, None, e.to_string()))?;
        let Value::Object(obj) = value else {
            return Err(schema(path, line, None, "record must be a JSON object"));
        };
        let id = string_field(&obj, "id", path, line)?
            .ok_or_else(|| schema(path, line, Some("id"), "missing field `id`"))?;
        let raw_label = string_field(&obj, "label", path, line)?
            .ok_or_else(|| schema(path, line, Some("label"), "missing field `label`"))?;
        let spec = &profile.spec;
        let label = {
            let as_id = LabelId::new(raw_label.clone());
            if spec.contains(&as_id) {
                as_id
            } else {
                spec.label_for_verbalizer(&raw_label)
                    .cloned()
                    .ok_or(DatasetError::UnknownLabel { path: path.to_path_buf(), line, label: raw_label })?
            }
        };
        let mut input = InstanceInput::new(id.clone());
        for f in &profile.fields {
            let v = string_field(&obj, f, path, line)?
                .ok_or_else(|| schema(path, line, Some(f), format!("missing field `{f}`")))?;
            input = input.with(f, v);
        }
        let explanation = string_field(&obj, "explanation", path, line)?.filter(|e| !e.trim().is_empty());
        if explanation.as_deref().is_some_and(|e| blocked(profile, e)) {
            out.dropped += 1;
            continue;
        }
        if !seen.insert(id.clone()) {
            return Err(DatasetError::DuplicateId { path: path.to_path_buf(), line, id });
        }
        out.records.push(DatasetRecord { input, label, explanation });
    }
    if out.dropped > 0 {
        log::info!("{}: dropped {} record(s) by explanation blocklist", path.display(), out.dropped);
    }
    Ok(out)
}

pub fn load_dataset(path: &Path, profile: &TaskProfile) -> Result<LoadedDataset, DatasetError> {
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })?;
    parse_dataset(&text, path, profile)
}

/// Demonstrations from training records; all must carry explanations.
pub fn to_demonstrations(records: &[DatasetRecord]) -> Result<Vec<Demonstration>, DatasetError> {
    records
        .iter()
        .map(|r| match &r.explanation {
            Some(e) => Ok(Demonstration { input: r.input.clone(), explanation: e.clone(), label: r.label.clone() }),
            None => Err(DatasetError::MissingExplanation(r.input.id.clone())),
        })
        .collect()
}

/// `n_splits` disjoint index lists of `split_size` each, taken as
/// consecutive chunks of a seeded shuffle of `0..n_records`. When there are
/// too few records the split size shrinks to `n_records / n_splits`.
pub fn make_splits(n_records: usize, n_splits: usize, split_size: usize, seed: u64) -> Vec<Vec<usize>> {
    if n_splits == 0 {
        return Vec::new();
    }
    let size = if n_splits * split_size > n_records {
        let shrunk = n_records / n_splits;
        log::warn!("{n_records} test records cannot fill {n_splits} splits of {split_size}; using {shrunk} per split");
        shrunk
    } else {
        split_size
    };
    if size == 0 {
        return vec![Vec::new(); n_splits];
    }
    let order = rng::permutation(n_records, rng::derive_seed(seed, "splits"));
    order.chunks(size).take(n_splits).map(<[usize]>::to_vec).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::templates::TemplateLibrary;

    fn profile(task: &str) -> TaskProfile {
        TemplateLibrary::builtin().task(task).unwrap().clone()
    }

    #[test]
    fn three_lines() {
        let text = r#"{"id":"a","premise":"p","hypothesis":"h","label":"neutral","explanation":"e"}
{"id":"b","premise":"p","hypothesis":"h","label":"Yes"}

{"id":"c","premise":"p","hypothesis":"h","label":"contradiction","explanation":"x"}
"#;
        let d = parse_dataset(text, Path::new("t.jsonl"), &profile("esnli")).unwrap();
        assert_eq!(d.records.len(), 3);
        assert_eq!(d.records[1].label.as_str(), "entailment");
        assert_eq!(d.records[1].explanation, None);
        assert_eq!(d.dropped, 0);
    }

    #[test]
    fn anli_blocklist_drops() {
        let text = r#"{"id":"a","premise":"p","hypothesis":"h","label":"neutral","explanation":"The Model was confused"}
{"id":"b","premise":"p","hypothesis":"h","label":"neutral","explanation":"fine"}
"#;
        let d = parse_dataset(text, Path::new("t.jsonl"), &profile("anli_r1")).unwrap();
        assert_eq!(d.records.len(), 1);
        assert_eq!(d.dropped, 1);
        // ESNLI has no blocklist.
        assert_eq!(parse_dataset(text, Path::new("t.jsonl"), &profile("esnli")).unwrap().dropped, 0);
    }

    #[test]
    fn schema_errors_name_line_and_field() {
        let text = "{\"id\":\"a\",\"premise\":\"p\",\"hypothesis\":\"h\",\"label\":\"neutral\"}\n{\"id\":\"b\",\"premise\":\"p\",\"label\":\"neutral\"}\n";
        match parse_dataset(text, Path::new("t.jsonl"), &profile("esnli")) {
            Err(DatasetError::Schema { line, field, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(field.as_deref(), Some("hypothesis"));
            }
            other => panic!("{other:?}"),
        }
        let text = "{\"id\":\"a\",\"premise\":\"p\",\"hypothesis\":\"h\",\"label\":\"sideways\"}\n";
        assert!(matches!(
            parse_dataset(text, Path::new("t.jsonl"), &profile("esnli")),
            Err(DatasetError::UnknownLabel { line: 1, .. })
        ));
        assert!(matches!(
            parse_dataset("not json\n", Path::new("t.jsonl"), &profile("esnli")),
            Err(DatasetError::Schema { line: 1, .. })
        ));
    }

    #[test]
    fn splits_cover_disjointly() {
        let s = make_splits(1500, 5, 300, 9);
        assert_eq!(s.len(), 5);
        let mut all: Vec<usize> = s.iter().flatten().copied().collect();
        all.sort();
        assert_eq!(all, (0..1500).collect::<Vec<_>>());
        assert_eq!(s, make_splits(1500, 5, 300, 9));
        assert_ne!(s, make_splits(1500, 5, 300, 10));
    }

    #[test]
    fn splits_shrink() {
        let s = make_splits(500, 5, 300, 1);
        assert!(s.iter().all(|c| c.len() == 100));
        let s = make_splits(500, 5, 100, 1);
        assert!(s.iter().all(|c| c.len() == 100));
        let s = make_splits(3, 5, 300, 1);
        assert_eq!(s.len(), 5);
        assert!(s.iter().all(|c| c.is_empty()));
    }
}
