use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backend::DEFAULT_TEMPERATURE;
use crate::error::{Error, Result};
use crate::sampler::{PipelineMode, DEFAULT_CANDIDATES};
use crate::scorer::DEFAULT_K_EXEMPLARS;
use crate::templates::ScoreVerbalizerSet;

pub const DEFAULT_DEMOS: usize = 48;
pub const DEFAULT_SPLITS: usize = 5;
pub const DEFAULT_SPLIT_SIZE: usize = 300;
pub const DEFAULT_TOKEN_BUDGET: usize = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "ICL")]
    Icl,
    #[serde(rename = "PE")]
    Pe,
    #[serde(rename = "EP")]
    Ep,
    SelfConsistency,
    #[serde(rename = "EASE")]
    Ease,
    #[serde(rename = "EASE_no_BLS")]
    EaseNoBls,
    #[serde(rename = "EASE_no_SPA")]
    EaseNoSpa,
    HardArgmax,
    #[serde(rename = "FLamE")]
    Flame,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::Icl,
        Method::Pe,
        Method::Ep,
        Method::SelfConsistency,
        Method::Ease,
        Method::EaseNoBls,
        Method::EaseNoSpa,
        Method::HardArgmax,
        Method::Flame,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Icl => "ICL",
            Method::Pe => "PE",
            Method::Ep => "EP",
            Method::SelfConsistency => "SelfConsistency",
            Method::Ease => "EASE",
            Method::EaseNoBls => "EASE_no_BLS",
            Method::EaseNoSpa => "EASE_no_SPA",
            Method::HardArgmax => "HardArgmax",
            Method::Flame => "FLamE",
        }
    }

    /// Methods that consult the explanation scorer.
    pub fn uses_scorer(self) -> bool {
        matches!(self, Method::Ease | Method::EaseNoSpa)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        Method::ALL
            .into_iter()
            .find(|m| m.as_str().replace('_', "").to_ascii_lowercase() == norm)
            .or(match norm.as_str() {
                "sc" => Some(Method::SelfConsistency),
                _ => None,
            })
            .ok_or_else(|| {
                let names: Vec<_> = Method::ALL.iter().map(|m| m.as_str()).collect();
                format!("unknown method `{s}` (expected one of {})", names.join(", "))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    /// Few-shot scorer whose demonstrations are mined from the training demos.
    #[default]
    Bootstrapped,
    ZeroShot,
    Lexical,
}

impl FromStr for ScorerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "bootstrapped" | "bls" => Ok(Self::Bootstrapped),
            "zero_shot" | "zeroshot" => Ok(Self::ZeroShot),
            "lexical" => Ok(Self::Lexical),
            other => Err(format!("unknown scorer `{other}` (expected bootstrapped, zero_shot or lexical)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScorerConfig {
    pub kind: ScorerKind,
    pub verbalizers: ScoreVerbalizerSet,
    /// Pipeline that produces the mined negatives.
    pub bootstrap_mode: PipelineMode,
    pub k_exemplars: usize,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        Self {
            kind: ScorerKind::Bootstrapped,
            verbalizers: ScoreVerbalizerSet::V1,
            bootstrap_mode: PipelineMode::Ep,
            k_exemplars: DEFAULT_K_EXEMPLARS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub task_id: String,
    pub method: Method,
    pub k_demos: usize,
    pub n_candidates: u32,
    pub temperature: f64,
    pub n_splits: usize,
    pub split_size: usize,
    pub run_seed: u64,
    pub backend: String,
    pub model: String,
    pub scorer: ScorerConfig,
    /// Template set override, e.g. `esnli-format2`.
    pub template_set: Option<String>,
    pub token_budget: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task_id: "esnli".into(),
            method: Method::Ease,
            k_demos: DEFAULT_DEMOS,
            n_candidates: DEFAULT_CANDIDATES,
            temperature: DEFAULT_TEMPERATURE,
            n_splits: DEFAULT_SPLITS,
            split_size: DEFAULT_SPLIT_SIZE,
            run_seed: 0,
            backend: "mock".into(),
            model: "mock".into(),
            scorer: ScorerConfig::default(),
            template_set: None,
            token_budget: DEFAULT_TOKEN_BUDGET,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.k_demos == 0 {
            return fail("k must be at least 1");
        }
        if self.n_candidates == 0 {
            return fail("n must be at least 1");
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return fail("temperature must be a non-negative number");
        }
        if self.n_splits == 0 || self.split_size == 0 {
            return fail("splits and split size must be at least 1");
        }
        if self.scorer.k_exemplars == 0 {
            return fail("bootstrap exemplar count must be at least 1");
        }
        Ok(())
    }
}

/// Settings read from a `key = value` config file. Keys mirror the CLI flag
/// names with `-` written as `_`; anything unset stays `None`.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub task: Option<String>,
    pub method: Option<String>,
    pub methods: Option<Vec<String>>,
    pub k: Option<usize>,
    pub n: Option<u32>,
    pub temperature: Option<f64>,
    pub splits: Option<usize>,
    pub split_size: Option<usize>,
    pub seed: Option<u64>,
    pub backend: Option<String>,
    pub model: Option<String>,
    pub api_base: Option<String>,
    pub mock_script: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub bootstrap_dir: Option<PathBuf>,
    pub bootstrap_mode: Option<String>,
    pub bootstrap_k: Option<usize>,
    pub verbalizers: Option<String>,
    pub scorer: Option<String>,
    pub template_set: Option<String>,
    pub templates: Option<PathBuf>,
    pub token_budget: Option<usize>,
    pub max_in_flight: Option<usize>,
    pub trace: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("config file: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Keeps every value set in `self` and fills the gaps from `base`.
    pub fn or(self, base: ConfigFile) -> ConfigFile {
        macro_rules! pick {
            ($($f:ident),*) => { ConfigFile { $($f: self.$f.or(base.$f)),* } };
        }
        pick!(
            task, method, methods, k, n, temperature, splits, split_size, seed, backend, model, api_base, mock_script,
            cache_dir, bootstrap_dir, bootstrap_mode, bootstrap_k, verbalizers, scorer, template_set, templates,
            token_budget, max_in_flight, trace, train, test, out
        )
    }

    /// The run configuration these settings describe, defaults elsewhere.
    pub fn run_config(&self) -> Result<RunConfig> {
        let d = RunConfig::default();
        let cfg_err = |e: String| Error::Config(e);
        let method = match self.method.as_deref().map(str::trim).filter(|m| !m.is_empty()) {
            Some(m) => m.parse().map_err(cfg_err)?,
            None => d.method,
        };
        let scorer = ScorerConfig {
            kind: match &self.scorer {
                Some(s) => s.parse().map_err(cfg_err)?,
                None => d.scorer.kind,
            },
            verbalizers: match &self.verbalizers {
                Some(s) => s.parse().map_err(cfg_err)?,
                None => d.scorer.verbalizers,
            },
            bootstrap_mode: match &self.bootstrap_mode {
                Some(s) => s.parse().map_err(cfg_err)?,
                None => d.scorer.bootstrap_mode,
            },
            k_exemplars: self.bootstrap_k.unwrap_or(d.scorer.k_exemplars),
        };
        let backend = self.backend.clone().unwrap_or(d.backend);
        let model = self.model.clone().unwrap_or_else(|| if backend == "mock" { "mock".into() } else { String::new() });
        let cfg = RunConfig {
            task_id: self.task.clone().unwrap_or(d.task_id),
            method,
            k_demos: self.k.unwrap_or(d.k_demos),
            n_candidates: self.n.unwrap_or(d.n_candidates),
            temperature: self.temperature.unwrap_or(d.temperature),
            n_splits: self.splits.unwrap_or(d.n_splits),
            split_size: self.split_size.unwrap_or(d.split_size),
            run_seed: self.seed.unwrap_or(d.run_seed),
            backend,
            model,
            scorer,
            template_set: self.template_set.clone(),
            token_budget: self.token_budget.unwrap_or(d.token_budget),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn methods(&self) -> Result<Vec<Method>> {
        match &self.methods {
            Some(ms) => ms.iter().map(|m| m.parse().map_err(Error::Config)).collect(),
            None => Ok(Method::ALL.to_vec()),
        }
    }
}
