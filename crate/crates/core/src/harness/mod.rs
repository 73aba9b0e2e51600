//! Repeated-split experiments: impute, fit the supermodel, predict, evaluate.
//!
//! Each (split, strategy) cell runs independently with its own seed; a failing
//! cell is recorded and the sweep continues.

mod bedside;
mod config;
mod report;

use std::collections::BTreeSet;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;

pub use bedside::{impute_bedside, BedsideImputation};
pub use config::{
    load_config_file, schema_sidecar, DataSource, ExperimentConfig, FileSource, SaveModels, SyntheticSource,
    DEFAULT_REPORT_CUTOFF, DEFAULT_SPLITS, DESK_SPLITS,
};
pub use report::{
    read_metrics_csv, read_runtimes_csv, summarize, write_outputs, CellStatus, CurveRow, MetricRow, MetricSummary,
    RuntimeRow, RuntimeSummary, Summary,
};

use crate::datamodel::{
    apply_lumen_rules_dataset, io, stack_landmarks, transform_labs, Episode, EventType, PredictorSchema, StackedDataset,
};
use crate::envelope::Envelope;
use crate::error::{Error, Result};
use crate::eval::{evaluate, rubin_pool, MetricReport, PredLabelSet};
use crate::exec::Execution;
use crate::imputers::{fit_imputer, StrategySpec};
use crate::landmark::{fit_supermodel, predict_cif, PredictionRequest, SupermodelFit};
use crate::rng::{derive_seed, substream, tag_hash};
use crate::synthgen::{calibrate_clabsi_baseline, generate_cohort, impose_missingness};

/// Episodes with missingness, as read or generated.
#[derive(Debug, Clone)]
pub struct Cohort {
    pub schema: PredictorSchema,
    pub episodes: Vec<Episode>,
}

pub fn load_cohort(source: &DataSource, seed: u64, exec: Execution) -> Result<Cohort> {
    match source {
        DataSource::Synthetic(syn) => synthesize(syn, seed, exec),
        DataSource::File(f) => {
            let schema = match &f.schema {
                Some(s) => s.clone(),
                None => serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(f.schema_file())?))?,
            };
            let episodes = io::read_episodes(&f.path, &schema)?;
            Ok(Cohort { schema, episodes })
        }
    }
}

/// Generates a cohort and masks it. `seed` drives generation and masking.
pub fn synthesize(syn: &SyntheticSource, seed: u64, exec: Execution) -> Result<Cohort> {
    let mut g = syn.generator_config(derive_seed(seed, &[tag_hash("cohort")]));
    if syn.calibrate {
        g.baseline_rates[0] = calibrate_clabsi_baseline(&g, syn.target_prevalence, exec)?;
    }
    let full = generate_cohort(&g, exec)?;
    let masked = impose_missingness(&full, &syn.missingness_specs(), derive_seed(seed, &[tag_hash("missingness")]))?;
    Ok(Cohort { schema: masked.schema, episodes: masked.episodes })
}

/// Puts `round(ratio * admissions)` whole admissions, chosen by a seeded
/// shuffle, into training and the rest into validation.
pub fn split_by_admission(episodes: &[Episode], ratio: f64, seed: u64) -> Result<(Vec<Episode>, Vec<Episode>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio {ratio} outside (0, 1)")));
    }
    let admissions: BTreeSet<u64> = episodes.iter().map(|e| e.admission_id).collect();
    if admissions.len() < 2 {
        return Err(Error::Validation(format!("need at least 2 admissions to split, found {}", admissions.len())));
    }
    let mut ids: Vec<u64> = admissions.into_iter().collect();
    ids.shuffle(&mut substream(seed, &[tag_hash("split")]));
    let n_train = ((ratio * ids.len() as f64).round() as usize).clamp(1, ids.len() - 1);
    let train_ids: BTreeSet<u64> = ids[..n_train].iter().copied().collect();
    let (train, valid) = episodes.iter().cloned().partition(|e| train_ids.contains(&e.admission_id));
    Ok((train, valid))
}

/// Landmark-stacked training and validation data on the model scale.
#[derive(Debug, Clone)]
pub struct SplitData {
    pub train: StackedDataset,
    pub valid: StackedDataset,
}

/// Stacks episodes, applies lumen rules and log-transforms lab values.
pub fn prepare_stacked(episodes: &[Episode], schema: &PredictorSchema, cfg: &ExperimentConfig) -> Result<StackedDataset> {
    let stacked = stack_landmarks(episodes, schema, cfg.first_landmark, cfg.last_landmark, cfg.horizon)?;
    transform_labs(&apply_lumen_rules_dataset(&stacked))
}

pub fn prepare_split(cohort: &Cohort, cfg: &ExperimentConfig, split: usize) -> Result<SplitData> {
    let (train, valid) = split_by_admission(&cohort.episodes, cfg.train_fraction, split_seed(cfg.seed, split))?;
    Ok(SplitData {
        train: prepare_stacked(&train, &cohort.schema, cfg)?,
        valid: prepare_stacked(&valid, &cohort.schema, cfg)?,
    })
}

pub fn split_seed(master: u64, split: usize) -> u64 {
    derive_seed(master, &[tag_hash("split"), split as u64])
}

pub fn cell_seed(master: u64, split: usize, spec: StrategySpec) -> u64 {
    derive_seed(master, &[tag_hash("cell"), split as u64, tag_hash(&spec.to_string())])
}

/// Per-phase wall-clock seconds.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PhaseTimes {
    pub impute: f64,
    pub build: f64,
    pub predict: f64,
}

/// Outcome of one (split, strategy) cell.
#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub split: usize,
    pub strategy: StrategySpec,
    pub times: PhaseTimes,
    /// `(landmark, report)` for each evaluated landmark.
    pub reports: Vec<(u32, MetricReport)>,
    pub error: Option<String>,
    /// Serialized models as `(file name, envelope)`.
    pub models: Vec<(String, Envelope)>,
}

impl CellOutcome {
    pub fn status(&self) -> CellStatus {
        if self.error.is_some() {
            CellStatus::Failed
        } else {
            CellStatus::Ok
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub cells: Vec<CellOutcome>,
}

impl ExperimentResult {
    pub fn any_failed(&self) -> bool {
        self.cells.iter().any(|c| c.error.is_some())
    }
}

pub fn execution(cfg: &ExperimentConfig) -> Execution {
    if cfg.parallel {
        Execution::Parallel
    } else {
        Execution::Sequential
    }
}

/// Runs every (split, strategy) cell. Only configuration or data-loading
/// problems abort; cell failures are part of the result.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let exec = execution(cfg);
    let cohort = load_cohort(&cfg.data, cfg.seed, exec)?;
    run_on_cohort(cfg, &cohort)
}

pub fn run_on_cohort(cfg: &ExperimentConfig, cohort: &Cohort) -> Result<ExperimentResult> {
    cfg.validate()?;
    let exec = execution(cfg);
    let splits: Vec<Result<SplitData>> = exec.map_range(cfg.n_splits, |k| prepare_split(cohort, cfg, k));
    let n_strat = cfg.strategies.len();
    let cells = exec.map_range(cfg.n_splits * n_strat, |c| {
        let (split, spec) = (c / n_strat, cfg.strategies[c % n_strat]);
        match &splits[split] {
            Ok(data) => run_cell(cfg, data, split, spec),
            Err(e) => CellOutcome {
                split,
                strategy: spec,
                times: PhaseTimes::default(),
                reports: Vec::new(),
                error: Some(e.to_string()),
                models: Vec::new(),
            },
        }
    });
    Ok(ExperimentResult { config: cfg.clone(), cells })
}

pub fn run_cell(cfg: &ExperimentConfig, data: &SplitData, split: usize, spec: StrategySpec) -> CellOutcome {
    let mut out = CellOutcome {
        split,
        strategy: spec,
        times: PhaseTimes::default(),
        reports: Vec::new(),
        error: None,
        models: Vec::new(),
    };
    if let Err(e) = cell_pipeline(cfg, data, split, spec, &mut out) {
        out.error = Some(e.to_string());
        out.reports.clear();
    }
    out
}

fn cell_pipeline(
    cfg: &ExperimentConfig,
    data: &SplitData,
    split: usize,
    spec: StrategySpec,
    out: &mut CellOutcome,
) -> Result<()> {
    let exec = execution(cfg);
    let seed = cell_seed(cfg.seed, split, spec);
    let icfg = crate::imputers::ImputerConfig { execution: exec, ..cfg.imputer.clone() };
    let mut sm = cfg.supermodel.clone();
    sm.execution = exec;

    let t = Instant::now();
    let fitted = fit_imputer(spec, &data.train, &icfg, seed)?;
    let valid = fitted.model.apply(&data.valid, exec)?;
    out.times.impute = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let models: Vec<SupermodelFit> =
        exec.map_slice(&fitted.train.datasets, |d| fit_supermodel(d, &sm)).into_iter().collect::<Result<_>>()?;
    out.times.build = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let per_completion: Vec<Vec<f64>> = models
        .iter()
        .zip(&valid.datasets)
        .map(|(fit, d)| predict_rows(fit, d, cfg.horizon))
        .collect::<Result<_>>()?;
    let pooled = rubin_pool(&per_completion, cfg.pool)?;
    out.times.predict = t.elapsed().as_secs_f64();

    let last = cfg.report_cutoff.min(cfg.last_landmark);
    for s in cfg.first_landmark..=last {
        let (p, y): (Vec<f64>, Vec<bool>) = data
            .valid
            .rows
            .iter()
            .zip(&pooled)
            .filter(|(r, _)| r.s == s)
            .map(|(r, &p)| (p, r.had_event(EventType::Clabsi)))
            .unzip();
        let set = PredLabelSet::new(p, y, s, &spec.to_string(), split)?;
        out.reports.push((s, evaluate(&set, &cfg.eval)));
    }

    let keep = match cfg.save_models {
        SaveModels::None => false,
        SaveModels::FirstSplit => split == 0,
        SaveModels::All => true,
    };
    if keep {
        let stem = format!("split{split:03}_{}", spec.to_string().replace('+', "_"));
        out.models.push((format!("{stem}.imputer.json"), fitted.model.to_envelope()?));
        for (c, fit) in models.iter().enumerate() {
            let name = if models.len() == 1 { format!("{stem}.supermodel.json") } else { format!("{stem}.supermodel.{c}.json") };
            out.models.push((name, fit.to_envelope(seed)?));
        }
    }
    Ok(())
}

/// Cause-1 risk over the horizon for every row; rows must be complete.
pub fn predict_rows(fit: &SupermodelFit, data: &StackedDataset, horizon: f64) -> Result<Vec<f64>> {
    data.rows
        .iter()
        .map(|r| {
            let z = r
                .values
                .iter()
                .map(|v| v.ok_or_else(|| Error::Validation(format!("episode {} has missing values at prediction", r.episode_id))))
                .collect::<Result<Vec<f64>>>()?;
            predict_cif(fit, &PredictionRequest::new(z, r.s, horizon), EventType::Clabsi)
        })
        .collect()
}

/// Runs the experiment and writes all outputs into `dir`.
pub fn run_to_dir(cfg: &ExperimentConfig, dir: &Path) -> Result<(ExperimentResult, Summary)> {
    let result = run_experiment(cfg)?;
    let summary = write_outputs(&result, dir)?;
    Ok((result, summary))
}
