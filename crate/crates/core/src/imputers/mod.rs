//! Missing-data strategies. Each is fitted on training landmark rows and
//! yields a frozen [`ImputerModel`] that completes a whole dataset or a single
//! new row (given the episode's earlier rows).
//!
//! Imputation of a row only looks at that row and earlier rows of the same
//! episode, so single-row and batch application agree.

mod chained;
mod forest;
mod indicators;
mod mice;
mod mixed;
mod regression;
mod simple;
mod stats;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use chained::ConditionalModel;
pub use forest::ForestState;
pub use indicators::{augment_missing_indicators, IndicatorColumn, IndicatorLayout, DEFAULT_INDICATOR_FILL};
pub use mice::{MiceState, OutcomeMode};
pub use mixed::{MixedState, MixedVarModel};
pub use regression::RegressionState;
pub use stats::LandmarkStats;

use crate::datamodel::{PredictorSchema, StackedDataset, StackedRow};
use crate::envelope::Envelope;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::solvers::MixedOptions;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    MissingIndicator,
    MedianMode,
    Locf,
    Regression,
    Mice,
    MiceYx,
    MixedModel,
    MissForest,
}

impl Strategy {
    pub const ALL: [Strategy; 8] = [
        Strategy::MissingIndicator,
        Strategy::MedianMode,
        Strategy::Locf,
        Strategy::Regression,
        Strategy::Mice,
        Strategy::MiceYx,
        Strategy::MixedModel,
        Strategy::MissForest,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Strategy::MissingIndicator => "missing_indicator",
            Strategy::MedianMode => "median_mode",
            Strategy::Locf => "locf",
            Strategy::Regression => "regression",
            Strategy::Mice => "mice",
            Strategy::MiceYx => "mice_yx",
            Strategy::MixedModel => "mixed_model",
            Strategy::MissForest => "missforest",
        }
    }

    /// Multiple imputation strategies produce `m` completions.
    pub fn is_multiple(self) -> bool {
        matches!(self, Strategy::Mice | Strategy::MiceYx)
    }
}

/// A base strategy, optionally with missing indicators appended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct StrategySpec {
    pub base: Strategy,
    pub with_indicators: bool,
}

pub const INDICATOR_SUFFIX: &str = "+indicators";

impl StrategySpec {
    pub fn plain(base: Strategy) -> Self {
        Self { base, with_indicators: false }
    }

    pub fn with_indicators(base: Strategy) -> Result<Self> {
        if base == Strategy::MissingIndicator {
            return Err(Error::Config("missing_indicator already carries indicators".into()));
        }
        Ok(Self { base, with_indicators: true })
    }

    /// Whether indicator columns are part of the output.
    pub fn has_indicators(&self) -> bool {
        self.with_indicators || self.base == Strategy::MissingIndicator
    }
}

impl fmt::Display for StrategySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.base.tag())?;
        if self.with_indicators {
            f.write_str(INDICATOR_SUFFIX)?;
        }
        Ok(())
    }
}

impl FromStr for StrategySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, ind) = match s.strip_suffix(INDICATOR_SUFFIX) {
            Some(n) => (n, true),
            None => (s, false),
        };
        let base = Strategy::ALL
            .into_iter()
            .find(|b| b.tag() == name)
            .ok_or_else(|| Error::Config(format!("unknown strategy `{s}`")))?;
        if ind {
            Self::with_indicators(base)
        } else {
            Ok(Self::plain(base))
        }
    }
}

impl TryFrom<String> for StrategySpec {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<StrategySpec> for String {
    fn from(s: StrategySpec) -> String {
        s.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImputerConfig {
    /// Completions for multiple imputation.
    pub m: usize,
    /// Chained-equation sweeps per completion.
    pub maxit: usize,
    /// Donor pool size for predictive mean matching.
    pub pmm_k: usize,
    pub ntrees: usize,
    pub forest_maxiter: usize,
    pub indicator_fill: f64,
    pub mixed: MixedOptions,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for ImputerConfig {
    fn default() -> Self {
        Self {
            m: 10,
            maxit: 10,
            pmm_k: 5,
            ntrees: 100,
            forest_maxiter: 10,
            indicator_fill: DEFAULT_INDICATOR_FILL,
            mixed: MixedOptions::default(),
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ImputerState {
    Indicator,
    MedianMode(LandmarkStats),
    Locf(LandmarkStats),
    Regression(RegressionState),
    Mice(MiceState),
    Mixed(MixedState),
    Forest(ForestState),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputerModel {
    pub strategy: StrategySpec,
    pub schema: PredictorSchema,
    pub seed: u64,
    pub m: usize,
    pub indicators: Option<IndicatorLayout>,
    pub indicator_fill: f64,
    pub state: ImputerState,
}

/// `m` completed copies of a dataset; every value present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletedData {
    pub strategy: String,
    pub iterations: usize,
    pub datasets: Vec<StackedDataset>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedImputer {
    pub model: ImputerModel,
    /// The training data as completed during fitting.
    pub train: CompletedData,
}

/// Completed values `[completion][row][variable]` for one episode.
type EpisodeValues = Vec<Vec<Vec<f64>>>;

pub fn fit_imputer(spec: StrategySpec, train: &StackedDataset, cfg: &ImputerConfig, seed: u64) -> Result<FittedImputer> {
    if cfg.m == 0 || cfg.maxit == 0 {
        return Err(Error::Config("m and maxit must be at least 1".into()));
    }
    let schema = train.schema.clone();
    let indicators = spec.has_indicators().then(|| IndicatorLayout::from_training(train));
    let mut train_values: Option<Vec<Vec<Vec<f64>>>> = None;
    let (state, m) = match spec.base {
        Strategy::MissingIndicator => (ImputerState::Indicator, 1),
        Strategy::MedianMode => (ImputerState::MedianMode(LandmarkStats::fit(train)?), 1),
        Strategy::Locf => (ImputerState::Locf(LandmarkStats::fit(train)?), 1),
        Strategy::Regression => {
            let (state, values) = regression::fit(train)?;
            train_values = Some(vec![values]);
            (ImputerState::Regression(state), 1)
        }
        Strategy::Mice | Strategy::MiceYx => {
            let mode = if spec.base == Strategy::MiceYx { OutcomeMode::Yx } else { OutcomeMode::Xx };
            let (state, values) = mice::fit(train, cfg, mode, seed)?;
            train_values = Some(values);
            (ImputerState::Mice(state), cfg.m)
        }
        Strategy::MixedModel => (ImputerState::Mixed(mixed::fit(train, &cfg.mixed)?), 1),
        Strategy::MissForest => {
            let (state, values) = forest::fit(train, cfg, seed)?;
            train_values = Some(vec![values]);
            (ImputerState::Forest(state), 1)
        }
    };
    let model = ImputerModel { strategy: spec, schema, seed, m, indicators, indicator_fill: cfg.indicator_fill, state };
    let train = match train_values {
        Some(values) => model.assemble(train, values.into_iter().map(|v| v.into_iter()).collect())?,
        None => model.apply(train, cfg.execution)?,
    };
    Ok(FittedImputer { model, train })
}

impl ImputerModel {
    fn check_schema(&self, schema: &PredictorSchema) -> Result<()> {
        if schema.fingerprint() != self.schema.fingerprint() {
            return Err(Error::Validation("data schema differs from the imputer's training schema".into()));
        }
        Ok(())
    }

    /// Output schema: predictors plus any indicator columns.
    pub fn output_schema(&self) -> Result<PredictorSchema> {
        match &self.indicators {
            Some(layout) => layout.extend_schema(&self.schema),
            None => Ok(self.schema.clone()),
        }
    }

    pub fn iterations(&self) -> usize {
        match &self.state {
            ImputerState::Mice(s) => s.maxit,
            ImputerState::Forest(s) => s.iterations.len(),
            ImputerState::Regression(_) => 1,
            _ => 0,
        }
    }

    /// Imputes the rows of one episode (ordered by landmark).
    fn impute_episode(&self, rows: &[StackedRow]) -> Result<EpisodeValues> {
        match &self.state {
            ImputerState::Indicator => Ok(vec![simple::fill_constant(rows, self.indicator_fill)]),
            ImputerState::MedianMode(stats) => Ok(vec![simple::median_mode(stats, rows)]),
            ImputerState::Locf(stats) => Ok(vec![simple::locf(stats, rows)]),
            ImputerState::Regression(state) => Ok(vec![regression::apply(state, rows)]),
            ImputerState::Mice(state) => Ok(mice::apply(state, self.seed, rows)),
            ImputerState::Mixed(state) => Ok(vec![mixed::apply(state, &self.schema, rows)]),
            ImputerState::Forest(state) => Ok(vec![forest::apply(state, rows)]),
        }
    }

    fn complete_row(&self, original: &StackedRow, values: Vec<f64>) -> Result<StackedRow> {
        if let Some(j) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Model(format!(
                "episode {} landmark {}: `{}` left incomplete",
                original.episode_id,
                original.s,
                self.schema.get(j).name
            )));
        }
        let mut out = original.clone();
        out.values = values.into_iter().map(Some).collect();
        if let Some(layout) = &self.indicators {
            out.values.extend(layout.indicators(&original.values).map(Some));
        }
        Ok(out)
    }

    /// Builds `m` datasets from per-completion row iterators in data order.
    fn assemble(&self, data: &StackedDataset, per_completion: Vec<std::vec::IntoIter<Vec<f64>>>) -> Result<CompletedData> {
        let schema = self.output_schema()?;
        let datasets = per_completion
            .into_iter()
            .map(|values| {
                let rows = data
                    .rows
                    .iter()
                    .zip(values)
                    .map(|(r, v)| self.complete_row(r, v))
                    .collect::<Result<Vec<_>>>()?;
                let mut d = data.with_rows(rows);
                d.schema = schema.clone();
                Ok(d)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CompletedData { strategy: self.strategy.to_string(), iterations: self.iterations(), datasets })
    }

    /// Completes a dataset with the frozen model.
    pub fn apply(&self, data: &StackedDataset, exec: Execution) -> Result<CompletedData> {
        self.check_schema(&data.schema)?;
        let ranges = data.episode_ranges();
        let per_episode = exec.map_slice(&ranges, |r| self.impute_episode(&data.rows[r.clone()]));
        let mut per_completion: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(data.len()); self.m];
        for ep in per_episode {
            for (c, rows) in ep?.into_iter().enumerate() {
                per_completion[c].extend(rows);
            }
        }
        self.assemble(data, per_completion.into_iter().map(|v| v.into_iter()).collect())
    }

    /// Completes the last row of `history` (one episode's rows up to and
    /// including the prediction landmark). Returns one row per completion,
    /// indicator columns included.
    pub fn apply_row(&self, history: &[StackedRow]) -> Result<Vec<Vec<f64>>> {
        let last = history.last().ok_or_else(|| Error::Validation("empty history".into()))?;
        if history.iter().any(|r| r.episode_id != last.episode_id) || history.windows(2).any(|w| w[0].s >= w[1].s) {
            return Err(Error::Validation("history must be one episode's rows in landmark order".into()));
        }
        if history.iter().any(|r| r.values.len() != self.schema.len()) {
            return Err(Error::Validation("row width differs from the imputer schema".into()));
        }
        self.impute_episode(history)?
            .into_iter()
            .map(|mut rows| {
                let values = rows.pop().expect("nonempty history");
                Ok(self.complete_row(last, values)?.values.into_iter().map(|v| v.expect("completed")).collect())
            })
            .collect()
    }

    pub fn to_envelope(&self) -> Result<Envelope> {
        Envelope::wrap("imputer", &self.strategy.to_string(), &self.schema.fingerprint(), self.seed, self)
    }

    pub fn from_envelope(env: &Envelope) -> Result<Self> {
        let model: Self = env.unwrap("imputer")?;
        if model.schema.fingerprint() != env.schema_hash {
            return Err(Error::Model("schema hash does not match the payload".into()));
        }
        Ok(model)
    }
}

/// Completed training values for fitting-time strategies, in row order.
pub(crate) fn observed_or(values: &[Option<f64>], mut fill: impl FnMut(usize) -> f64) -> Vec<f64> {
    values.iter().enumerate().map(|(j, v)| v.unwrap_or_else(|| fill(j))).collect()
}

#[cfg(test)]
mod tests;
