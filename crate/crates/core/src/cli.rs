//! The `ease` command line.
//!
//! Exit codes: 0 success, 2 configuration error, 3 backend exhaustion,
//! 4 dataset error, 1 anything else.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::backend::{Backend, DiskCache, LlmClient, MockBackend, MockScript, OfflineBackend, OpenAiBackend, OpenAiConfig};
use crate::error::{Error, Result};
use crate::harness::{self, ConfigFile, Method, RunConfig, RunDeps, REPORT_FILE};
use crate::prompting::ApproxTokenCounter;
use crate::sampler::PromptContext;
use crate::templates::TemplateLibrary;

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_BACKEND: i32 = 3;
pub const EXIT_DATASET: i32 = 4;

/// File written next to a run's report recording where its inputs came
/// from, so `replay` can find them again.
pub const INPUTS_FILE: &str = "inputs.json";

#[derive(Debug, Parser)]
#[command(name = "ease", version, about = "Explanation-weighted soft ensembling for few-shot LLM classification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Mine negative explanations and build the scorer's demonstration set.
    Bootstrap(Common),
    /// Run one method over the test splits.
    Run(Common),
    /// Run several methods with the same settings and tabulate them.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Comma-separated methods; all of them when omitted.
        #[arg(long, value_delimiter = ',')]
        methods: Vec<String>,
    },
    /// Re-run a recorded run from the response cache without the network.
    Replay {
        #[command(flatten)]
        common: Common,
        /// Directory of the run to replay.
        #[arg(long)]
        run_dir: PathBuf,
    },
    /// Win/tie/lose agreement from a CSV with columns c1,c2,s1,s2.
    Judge {
        input: PathBuf,
    },
}

#[derive(Debug, Args, Default, Clone)]
pub struct Common {
    /// Config file of `key = value` lines; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub method: Option<String>,
    /// Number of demonstrations.
    #[arg(long)]
    pub k: Option<usize>,
    /// Number of sampled candidates.
    #[arg(long)]
    pub n: Option<u32>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub splits: Option<usize>,
    #[arg(long)]
    pub split_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `openai` or `mock`.
    #[arg(long)]
    pub backend: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub api_base: Option<String>,
    /// JSON script for the mock backend.
    #[arg(long)]
    pub mock_script: Option<PathBuf>,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    #[arg(long)]
    pub bootstrap_dir: Option<PathBuf>,
    /// Pipeline used to mine negatives: `ep` or `pe`.
    #[arg(long)]
    pub bootstrap_mode: Option<String>,
    /// Exemplars per mining prompt.
    #[arg(long)]
    pub bootstrap_k: Option<usize>,
    /// Scoring verbalizer pair: `v1` (Yes/No), `v2` (True/False), `v3` (Foo/Jaa).
    #[arg(long)]
    pub verbalizers: Option<String>,
    /// `bootstrapped`, `zero_shot` or `lexical`.
    #[arg(long)]
    pub scorer: Option<String>,
    #[arg(long)]
    pub template_set: Option<String>,
    /// Directory with `manifest.json` replacing the built-in templates.
    #[arg(long)]
    pub templates: Option<PathBuf>,
    #[arg(long)]
    pub token_budget: Option<usize>,
    #[arg(long)]
    pub max_in_flight: Option<usize>,
    /// Append raw HTTP traffic to this JSONL file.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Common {
    fn as_file(&self) -> ConfigFile {
        ConfigFile {
            task: self.task.clone(),
            method: self.method.clone(),
            methods: None,
            k: self.k,
            n: self.n,
            temperature: self.temperature,
            splits: self.splits,
            split_size: self.split_size,
            seed: self.seed,
            backend: self.backend.clone(),
            model: self.model.clone(),
            api_base: self.api_base.clone(),
            mock_script: self.mock_script.clone(),
            cache_dir: self.cache_dir.clone(),
            bootstrap_dir: self.bootstrap_dir.clone(),
            bootstrap_mode: self.bootstrap_mode.clone(),
            bootstrap_k: self.bootstrap_k,
            verbalizers: self.verbalizers.clone(),
            scorer: self.scorer.clone(),
            template_set: self.template_set.clone(),
            templates: self.templates.clone(),
            token_budget: self.token_budget,
            max_in_flight: self.max_in_flight,
            trace: self.trace.clone(),
            train: self.train.clone(),
            test: self.test.clone(),
            out: self.out.clone(),
        }
    }

    /// Flags layered over the config file.
    pub fn resolve(&self) -> Result<ConfigFile> {
        let file = match &self.config {
            Some(p) => ConfigFile::load(p)?,
            None => ConfigFile::default(),
        };
        Ok(self.as_file().or(file))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInputs {
    pub train: PathBuf,
    pub test: PathBuf,
    pub templates: Option<PathBuf>,
    pub bootstrap_dir: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Template(_) | Error::Prompt(_) | Error::Core(_) => EXIT_CONFIG,
        Error::Backend(_) => EXIT_BACKEND,
        Error::Dataset(_) => EXIT_DATASET,
        _ => EXIT_OTHER,
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Output goes to `out`.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn library(settings: &ConfigFile) -> Result<TemplateLibrary> {
    match &settings.templates {
        Some(dir) => Ok(TemplateLibrary::load(dir)?),
        None => Ok(TemplateLibrary::builtin()),
    }
}

fn live_backend(settings: &ConfigFile, cfg: &RunConfig) -> Result<Arc<dyn Backend>> {
    match cfg.backend.as_str() {
        "mock" => {
            let path = settings
                .mock_script
                .as_ref()
                .ok_or_else(|| Error::Config("the mock backend needs --mock-script".into()))?;
            let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
            let script = MockScript::from_json(&text).map_err(|e| Error::Config(e.to_string()))?;
            Ok(Arc::new(MockBackend::new(script)))
        }
        "openai" => {
            let mut oc = OpenAiConfig::from_env().or_else(|e| {
                if cfg.model.is_empty() {
                    Err(Error::Config(e))
                } else {
                    Ok(OpenAiConfig::new("https://api.openai.com/v1", cfg.model.clone()))
                }
            })?;
            if let Some(base) = &settings.api_base {
                oc.base_url = base.clone();
            }
            if !cfg.model.is_empty() {
                oc.model = cfg.model.clone();
            }
            oc.trace = settings.trace.clone();
            Ok(Arc::new(OpenAiBackend::new(oc)))
        }
        other => Err(Error::Config(format!("unknown backend `{other}` (expected openai or mock)"))),
    }
}

/// Resolved model id: the flag, else `EASE_MODEL` for the HTTP backend.
fn resolve_model(mut cfg: RunConfig) -> RunConfig {
    if cfg.model.is_empty() && cfg.backend == "openai" {
        cfg.model = std::env::var(crate::backend::openai::ENV_MODEL).unwrap_or_default();
    }
    cfg
}

fn client(backend: Arc<dyn Backend>, settings: &ConfigFile) -> LlmClient {
    let mut c = LlmClient::new(backend);
    if let Some(dir) = &settings.cache_dir {
        c = c.with_cache(DiskCache::new(dir.clone()));
    }
    if let Some(m) = settings.max_in_flight {
        c = c.with_max_in_flight(m);
    }
    c
}

struct Data {
    train: harness::LoadedDataset,
    test: harness::LoadedDataset,
}

fn load_data(settings: &ConfigFile, lib: &TemplateLibrary, cfg: &RunConfig, need_test: bool) -> Result<Data> {
    let profile = lib.task(&cfg.task_id)?;
    let train_path = settings.train.as_ref().ok_or_else(|| Error::Config("--train is required".into()))?;
    let train = harness::load_dataset(train_path, profile)?;
    let test = if need_test {
        let p = settings.test.as_ref().ok_or_else(|| Error::Config("--test is required".into()))?;
        harness::load_dataset(p, profile)?
    } else {
        harness::LoadedDataset::default()
    };
    Ok(Data { train, test })
}

/// Runs the single method described by resolved settings, without writing
/// any files.
pub fn run_settings(settings: &ConfigFile) -> Result<(harness::RunReport, harness::RunStats)> {
    let cfg = resolve_model(settings.run_config()?);
    let lib = library(settings)?;
    let data = load_data(settings, &lib, &cfg, true)?;
    let c = client(live_backend(settings, &cfg)?, settings);
    let deps = RunDeps {
        library: &lib,
        client: &c,
        train: &data.train.records,
        test: &data.test.records,
        dropped_records: data.train.dropped + data.test.dropped,
        bootstrap_dir: settings.bootstrap_dir.clone(),
    };
    harness::run_experiment(&cfg, &deps)
}

fn default_out(cfg: &RunConfig) -> PathBuf {
    PathBuf::from("runs").join(format!("{}-{}-{}", cfg.task_id, cfg.method, cfg.run_seed))
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

fn execute(command: Command, out: &mut dyn Write) -> Result<()> {
    let io = |e: std::io::Error| Error::io("stdout", e);
    match command {
        Command::Judge { input } => {
            let f = fs::File::open(&input).map_err(|e| Error::io(input.display().to_string(), e))?;
            let summary = harness::judge_csv(f)?;
            writeln!(out, "win={} tie={} lose={}", summary.win, summary.tie, summary.lose).map_err(io)?;
            Ok(())
        }
        Command::Bootstrap(common) => {
            let settings = common.resolve()?;
            let cfg = resolve_model(settings.run_config()?);
            let lib = library(&settings)?;
            let data = load_data(&settings, &lib, &cfg, false)?;
            let c = client(live_backend(&settings, &cfg)?, &settings);
            let profile = lib.task(&cfg.task_id)?;
            let counter = ApproxTokenCounter;
            let ctx = PromptContext {
                profile,
                library: &lib,
                template_set: cfg.template_set.as_deref(),
                token_budget: cfg.token_budget,
                counter: &counter,
            };
            let demos = harness::run::select_demonstrations(&data.train.records, cfg.k_demos, cfg.run_seed)?;
            let dir = settings.bootstrap_dir.clone().unwrap_or_else(|| PathBuf::from("bootstrap"));
            let (negatives, set) = harness::run::bootstrap(&cfg, &demos, &c, &ctx, Some(&dir))?;
            let with_neg = negatives.values().filter(|n| !n.is_empty()).count();
            let items = set.map(|s| s.items.len()).unwrap_or(0);
            writeln!(
                out,
                "{}: {} of {} demonstrations yielded negatives; {} scoring items written to {}",
                cfg.task_id,
                with_neg,
                demos.len(),
                items,
                dir.join(&cfg.task_id).join(format!("{}.jsonl", cfg.run_seed)).display()
            )
            .map_err(io)?;
            Ok(())
        }
        Command::Run(common) => {
            let settings = common.resolve()?;
            let (report, stats) = run_settings(&settings)?;
            let dir = settings.out.clone().unwrap_or_else(|| default_out(&report.config));
            harness::write_run(&dir, &report, &stats)?;
            let inputs = RunInputs {
                train: absolute(settings.train.as_ref().expect("checked by load_data")),
                test: absolute(settings.test.as_ref().expect("checked by load_data")),
                templates: settings.templates.as_deref().map(absolute),
                bootstrap_dir: settings.bootstrap_dir.as_deref().map(absolute),
                cache_dir: settings.cache_dir.as_deref().map(absolute),
            };
            let json = serde_json::to_string_pretty(&inputs).expect("inputs serialize") + "\n";
            fs::write(dir.join(INPUTS_FILE), json).map_err(|e| Error::io(dir.display().to_string(), e))?;
            write!(out, "{}", harness::table_csv(&[&report])?).map_err(io)?;
            writeln!(out, "report: {}", dir.join(REPORT_FILE).display()).map_err(io)?;
            Ok(())
        }
        Command::Compare { common, methods } => {
            let settings = common.resolve()?;
            let cfg = resolve_model(settings.run_config()?);
            let methods: Vec<Method> = if methods.is_empty() {
                settings.methods()?
            } else {
                methods.iter().map(|m| m.parse().map_err(Error::Config)).collect::<Result<_>>()?
            };
            let lib = library(&settings)?;
            let data = load_data(&settings, &lib, &cfg, true)?;
            let c = client(live_backend(&settings, &cfg)?, &settings);
            let deps = RunDeps {
                library: &lib,
                client: &c,
                train: &data.train.records,
                test: &data.test.records,
                dropped_records: data.train.dropped + data.test.dropped,
                bootstrap_dir: settings.bootstrap_dir.clone(),
            };
            let dir = settings.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(format!("{}-compare", cfg.task_id)));
            let reports = harness::compare(&cfg, &methods, &deps, Some(&dir))?;
            let refs: Vec<_> = reports.iter().collect();
            write!(out, "{}", harness::table_csv(&refs)?).map_err(io)?;
            Ok(())
        }
        Command::Replay { common, run_dir } => {
            let original = harness::read_report(&run_dir.join(REPORT_FILE))?;
            let inputs: Option<RunInputs> = fs::read_to_string(run_dir.join(INPUTS_FILE))
                .ok()
                .and_then(|t| serde_json::from_str(&t).ok());
            let mut settings = common.resolve()?;
            if let Some(i) = inputs {
                settings.train = settings.train.or(Some(i.train));
                settings.test = settings.test.or(Some(i.test));
                settings.templates = settings.templates.or(i.templates);
                settings.bootstrap_dir = settings.bootstrap_dir.or(i.bootstrap_dir);
                settings.cache_dir = settings.cache_dir.or(i.cache_dir);
            }
            if settings.cache_dir.is_none() {
                return Err(Error::Config("replay needs --cache-dir".into()));
            }
            let cfg = original.config.clone();
            let lib = library(&settings)?;
            let data = load_data(&settings, &lib, &cfg, true)?;
            let backend: Arc<dyn Backend> = Arc::new(OfflineBackend::new(cfg.backend.clone(), cfg.model.clone()));
            let c = client(backend, &settings);
            let deps = RunDeps {
                library: &lib,
                client: &c,
                train: &data.train.records,
                test: &data.test.records,
                dropped_records: data.train.dropped + data.test.dropped,
                bootstrap_dir: settings.bootstrap_dir.clone(),
            };
            let (report, stats) = harness::run_experiment(&cfg, &deps)?;
            let dir = settings.out.clone().unwrap_or_else(|| run_dir.join("replay"));
            harness::write_run(&dir, &report, &stats)?;
            let before = fs::read(run_dir.join(REPORT_FILE)).map_err(|e| Error::io(run_dir.display().to_string(), e))?;
            let identical = before == report.to_json().into_bytes();
            writeln!(
                out,
                "replayed {} instances with {} backend calls; report identical: {identical}",
                report.instances.len(),
                stats.requests.backend_calls
            )
            .map_err(io)?;
            if identical {
                Ok(())
            } else {
                Err(Error::Config("replayed report differs from the recorded one".into()))
            }
        }
    }
}
