use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::chained::visit_order;
use super::stats::LandmarkStats;
use crate::datamodel::{PredictorKind, PredictorSchema, StackedDataset, StackedRow};
use crate::error::Result;
use crate::solvers::{blup_for_new, fit_random_intercept, Family, MixedFit, MixedOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedVarModel {
    pub var: usize,
    /// Predictor covariates; the landmark is always appended.
    pub covariates: Vec<usize>,
    pub fit: MixedFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedState {
    pub stats: LandmarkStats,
    pub models: Vec<MixedVarModel>,
}

fn family(kind: PredictorKind) -> Family {
    match kind {
        PredictorKind::Binary => Family::Binomial,
        PredictorKind::Count => Family::Poisson,
        _ => Family::Gaussian,
    }
}

/// Lumens use their catheter type; ordinal scores use the landmark only;
/// everything else uses static predictors and fully observed time-varying
/// predictors.
fn covariates(schema: &PredictorSchema, var: usize, missing: &[f64]) -> Vec<usize> {
    let pred = schema.get(var);
    if let Some(link) = &pred.linked_catheter_type {
        return vec![schema.index_of(link).expect("validated link")];
    }
    if pred.kind == PredictorKind::Ordinal {
        return Vec::new();
    }
    (0..schema.len())
        .filter(|&c| c != var)
        .filter(|&c| {
            let q = schema.get(c);
            q.linked_catheter_type.is_none() && (q.baseline_only || missing[c] == 0.0)
        })
        .collect()
}

fn fill(stats: &LandmarkStats, schema: &PredictorSchema, c: usize, s: u32) -> f64 {
    if schema.get(c).baseline_only {
        stats.baseline(c)
    } else {
        stats.at(c, s)
    }
}

fn design(model: &MixedVarModel, stats: &LandmarkStats, schema: &PredictorSchema, row: &StackedRow) -> Vec<f64> {
    model
        .covariates
        .iter()
        .map(|&c| row.values[c].unwrap_or_else(|| fill(stats, schema, c, row.s)))
        .chain(std::iter::once(f64::from(row.s)))
        .collect()
}

pub(super) fn fit(train: &StackedDataset, opts: &MixedOptions) -> Result<MixedState> {
    let schema = &train.schema;
    let stats = LandmarkStats::fit(train)?;
    let missing = train.missing_fraction();
    let mut models = Vec::new();
    for j in visit_order(train) {
        if schema.get(j).baseline_only {
            continue;
        }
        let mut model = MixedVarModel { var: j, covariates: covariates(schema, j, &missing), fit: placeholder() };
        let rows: Vec<&StackedRow> = train.rows.iter().filter(|r| r.values[j].is_some()).collect();
        let width = model.covariates.len() + 1;
        let mut x = DMatrix::<f64>::zeros(rows.len(), width);
        for (i, r) in rows.iter().enumerate() {
            for (c, v) in design(&model, &stats, schema, r).into_iter().enumerate() {
                x[(i, c)] = v;
            }
        }
        let y: Vec<f64> = rows.iter().map(|r| r.values[j].expect("observed")).collect();
        let groups: Vec<u64> = rows.iter().map(|r| r.episode_id).collect();
        model.fit = fit_random_intercept(&groups, &x, &y, family(schema.get(j).kind), opts)?;
        models.push(model);
    }
    Ok(MixedState { stats, models })
}

fn placeholder() -> MixedFit {
    MixedFit { family: Family::Gaussian, fixed_effects: Vec::new(), sigma_u: 0.0, residual_sd: None, blups: Vec::new(), warning: None }
}

/// Missing values at the episode's first row take the baseline median/mode;
/// later ones the model prediction with the intercept estimated from the
/// episode's observed values so far.
pub(super) fn apply(state: &MixedState, schema: &PredictorSchema, rows: &[StackedRow]) -> Vec<Vec<f64>> {
    let stats = &state.stats;
    let mut out: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.values.iter().enumerate().map(|(j, v)| v.unwrap_or_else(|| fill(stats, schema, j, r.s))).collect())
        .collect();
    for model in &state.models {
        let j = model.var;
        let mut hist_x: Vec<Vec<f64>> = Vec::new();
        let mut hist_y: Vec<f64> = Vec::new();
        for (r, row) in rows.iter().enumerate() {
            let x = design(model, stats, schema, row);
            match row.values[j] {
                Some(v) => {
                    hist_x.push(x);
                    hist_y.push(v);
                }
                None if r == 0 => out[r][j] = stats.baseline(j),
                None => {
                    let u = blup_for_new(&model.fit, &hist_x, &hist_y);
                    let mean = model.fit.predict_mean(&x, u);
                    out[r][j] = if model.fit.family == Family::Binomial { f64::from(mean >= 0.5) } else { mean };
                }
            }
        }
    }
    out
}
