use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datamodel::{PredictorSchema, DEFAULT_FIRST_LANDMARK, DEFAULT_HORIZON, DEFAULT_LAST_LANDMARK};
use crate::error::{Error, Result};
use crate::eval::{EvalOptions, PoolScale};
use crate::imputers::{ImputerConfig, Strategy, StrategySpec};
use crate::landmark::SupermodelOptions;
use crate::synthgen::{desk_config, desk_informative_missingness, GeneratorConfig, MissingnessSpec, DESK_PREVALENCE};

pub const DEFAULT_SPLITS: usize = 100;
pub const DESK_SPLITS: usize = 20;
pub const DEFAULT_REPORT_CUTOFF: u32 = 14;

/// Synthetic cohort recipe. Unset fields fall back to the desk preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSource {
    pub n_episodes: Option<usize>,
    pub generator: Option<GeneratorConfig>,
    pub missingness: Option<Vec<MissingnessSpec>>,
    /// Re-tune the CLABSI baseline rate to this episode-level prevalence.
    pub calibrate: bool,
    pub target_prevalence: f64,
}

impl Default for SyntheticSource {
    fn default() -> Self {
        Self { n_episodes: None, generator: None, missingness: None, calibrate: true, target_prevalence: DESK_PREVALENCE }
    }
}

impl SyntheticSource {
    /// Generator settings for a given cohort seed.
    pub fn generator_config(&self, seed: u64) -> GeneratorConfig {
        let mut g = self.generator.clone().unwrap_or_else(|| desk_config(seed));
        g.seed = seed;
        if let Some(n) = self.n_episodes {
            g.n_episodes = n;
        }
        g
    }

    pub fn missingness_specs(&self) -> Vec<MissingnessSpec> {
        self.missingness.clone().unwrap_or_else(desk_informative_missingness)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileSource {
    pub path: PathBuf,
    /// Inline schema; otherwise read from `schema_path`, or `<path>.schema.json`.
    #[serde(default)]
    pub schema: Option<PredictorSchema>,
    #[serde(default)]
    pub schema_path: Option<PathBuf>,
}

impl FileSource {
    pub fn schema_file(&self) -> PathBuf {
        self.schema_path.clone().unwrap_or_else(|| schema_sidecar(&self.path))
    }
}

/// `<file>.schema.json` next to an episode file.
pub fn schema_sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".schema.json");
    PathBuf::from(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataSource {
    Synthetic(SyntheticSource),
    File(FileSource),
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SyntheticSource::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SaveModels {
    None,
    #[default]
    FirstSplit,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub strategies: Vec<StrategySpec>,
    pub n_splits: usize,
    /// Fraction of admissions assigned to training.
    pub train_fraction: f64,
    pub first_landmark: u32,
    pub last_landmark: u32,
    pub horizon: f64,
    /// Last landmark that gets metrics.
    pub report_cutoff: u32,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub parallel: bool,
    pub save_models: SaveModels,
    pub imputer: ImputerConfig,
    pub supermodel: SupermodelOptions,
    pub eval: EvalOptions,
    pub pool: PoolScale,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataSource::default(),
            strategies: Strategy::ALL.into_iter().map(StrategySpec::plain).collect(),
            n_splits: DEFAULT_SPLITS,
            train_fraction: 2.0 / 3.0,
            first_landmark: DEFAULT_FIRST_LANDMARK,
            last_landmark: DEFAULT_LAST_LANDMARK,
            horizon: DEFAULT_HORIZON,
            report_cutoff: DEFAULT_REPORT_CUTOFF,
            seed: 1,
            output_dir: None,
            parallel: true,
            save_models: SaveModels::default(),
            imputer: ImputerConfig::default(),
            supermodel: SupermodelOptions::default(),
            eval: EvalOptions::default(),
            pool: PoolScale::default(),
        }
    }
}

impl ExperimentConfig {
    /// Desk-scale preset: 20 splits over a 3000-episode synthetic cohort.
    pub fn desk(seed: u64) -> Self {
        Self { n_splits: DESK_SPLITS, seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.strategies.is_empty() {
            return Err(Error::Config("no strategies given".into()));
        }
        if self.n_splits == 0 {
            return Err(Error::Config("n_splits must be at least 1".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!("train_fraction {} outside (0, 1)", self.train_fraction)));
        }
        if self.first_landmark > self.last_landmark {
            return Err(Error::Config("first_landmark exceeds last_landmark".into()));
        }
        if !(self.horizon > 0.0) {
            return Err(Error::Config("horizon must be positive".into()));
        }
        if self.imputer.m == 0 || self.imputer.maxit == 0 {
            return Err(Error::Config("imputer m and maxit must be at least 1".into()));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = self.strategies.iter().find(|s| !seen.insert(**s)) {
            return Err(Error::Config(format!("strategy `{dup}` listed twice")));
        }
        Ok(())
    }

    /// Parses TOML, or JSON when the extension is `.json`. Relative data paths
    /// are resolved against the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: Self = load_config_file(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let DataSource::File(f) = &mut cfg.data {
            f.path = resolve(base, &f.path);
            f.schema_path = f.schema_path.as_ref().map(|p| resolve(base, p));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Reads a serde type from a TOML or JSON file, chosen by extension.
pub fn load_config_file<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    } else {
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}
