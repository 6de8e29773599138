//! Datasets, splits, experiment orchestration and report files.

pub mod config;
pub mod dataset;
pub mod run;

use std::fs;
use std::io::Write;
use std::path::Path;

pub use config::{ConfigFile, Method, RunConfig, ScorerConfig, ScorerKind};
pub use dataset::{load_dataset, make_splits, DatasetError, DatasetRecord, LoadedDataset};
pub use run::{recompute_prediction, run_experiment, InstanceAudit, RunDeps, RunReport, RunStats, SplitResult};

use crate::aggregate::{human_judge, Judgement};
use crate::error::{Error, Result};

pub const REPORT_FILE: &str = "report.json";
pub const STATS_FILE: &str = "stats.json";
pub const TABLE_FILE: &str = "table.csv";

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path.display().to_string(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path.display().to_string(), e.error))?;
    Ok(())
}

/// One table row per report: method, task, per-split and mean accuracy in
/// percent with two decimals, and the failure count.
pub fn table_csv(reports: &[&RunReport]) -> Result<String> {
    let n_splits = reports.iter().map(|r| r.split_accuracies.len()).max().unwrap_or(0);
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["method".to_string(), "task".to_string()];
    header.extend((1..=n_splits).map(|i| format!("split_{i}")));
    header.extend(["mean".to_string(), "failures".to_string()]);
    let csv_err = |e: csv::Error| Error::Config(format!("csv: {e}"));
    w.write_record(&header).map_err(csv_err)?;
    for r in reports {
        let mut row = vec![r.config.method.to_string(), r.config.task_id.clone()];
        row.extend((0..n_splits).map(|i| r.split_accuracies.get(i).map_or(String::new(), |a| format!("{:.2}", a * 100.0))));
        row.push(format!("{:.2}", r.mean_accuracy * 100.0));
        row.push(r.failures.to_string());
        w.write_record(&row).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

/// Writes `report.json`, `stats.json` and `table.csv` into `dir`.
pub fn write_run(dir: &Path, report: &RunReport, stats: &RunStats) -> Result<()> {
    write_atomic(&dir.join(REPORT_FILE), report.to_json().as_bytes())?;
    let stats_json = serde_json::to_string_pretty(stats).expect("stats serialize") + "\n";
    write_atomic(&dir.join(STATS_FILE), stats_json.as_bytes())?;
    write_atomic(&dir.join(TABLE_FILE), table_csv(&[report])?.as_bytes())
}

pub fn read_report(path: &Path) -> Result<RunReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Runs each method with otherwise identical settings. Reports land in
/// `<dir>/<method>/` and a combined `table.csv` in `dir`.
pub fn compare(base: &RunConfig, methods: &[Method], deps: &RunDeps<'_>, dir: Option<&Path>) -> Result<Vec<RunReport>> {
    let mut reports = Vec::new();
    for &m in methods {
        let cfg = RunConfig { method: m, ..base.clone() };
        let (report, stats) = run_experiment(&cfg, deps)?;
        if let Some(d) = dir {
            write_run(&d.join(m.as_str()), &report, &stats)?;
        }
        reports.push(report);
    }
    if let Some(d) = dir {
        let refs: Vec<&RunReport> = reports.iter().collect();
        write_atomic(&d.join(TABLE_FILE), table_csv(&refs)?.as_bytes())?;
    }
    Ok(reports)
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct JudgeRow {
    pub c1: u32,
    pub c2: u32,
    pub s1: f64,
    pub s2: f64,
}

#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct JudgeSummary {
    pub win: usize,
    pub tie: usize,
    pub lose: usize,
    pub judgements: Vec<Judgement>,
}

/// Reads a `c1,c2,s1,s2` CSV (with header) and tallies [`human_judge`].
pub fn judge_csv(reader: impl std::io::Read) -> Result<JudgeSummary> {
    let mut summary = JudgeSummary::default();
    for (i, row) in csv::Reader::from_reader(reader).deserialize::<JudgeRow>().enumerate() {
        let row = row.map_err(|e| Error::Config(format!("judge csv row {}: {e}", i + 1)))?;
        let j = human_judge(row.c1, row.c2, row.s1, row.s2);
        match j {
            Judgement::Win => summary.win += 1,
            Judgement::Tie => summary.tie += 1,
            Judgement::Lose => summary.lose += 1,
        }
        summary.judgements.push(j);
    }
    Ok(summary)
}
