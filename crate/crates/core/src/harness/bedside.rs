use serde::Serialize;

use crate::datamodel::io::EpisodeRecord;
use crate::datamodel::{apply_lumen_rules_to, log_transform_values, StackedRow};
use crate::error::{Error, Result};
use crate::imputers::ImputerModel;

/// Imputed values for one episode's latest landmark row, on the model scale
/// (log-flagged predictors stay logged).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BedsideImputation {
    pub strategy: String,
    pub episode_id: u64,
    pub landmark: u32,
    pub columns: Vec<String>,
    pub completions: Vec<Vec<f64>>,
    /// Element-wise mean over completions.
    pub mean: Vec<f64>,
}

/// Prepares raw rows of one episode as the training pipeline does (static
/// predictors from the first row, lumen rules, log transform) and imputes the
/// row with the largest landmark.
pub fn impute_bedside(model: &ImputerModel, records: &[EpisodeRecord]) -> Result<BedsideImputation> {
    let first = records.first().ok_or_else(|| Error::Validation("no rows given".into()))?;
    if records.iter().any(|r| r.episode_id != first.episode_id) {
        return Err(Error::Validation("rows must belong to one episode".into()));
    }
    let mut records: Vec<&EpisodeRecord> = records.iter().collect();
    records.sort_by_key(|r| r.s);
    let baseline = records[0].values.clone();
    let rows: Vec<StackedRow> = records
        .iter()
        .map(|r| {
            let mut values = r.values.clone();
            for (j, p) in model.schema.predictors().iter().enumerate() {
                if p.baseline_only {
                    values[j] = baseline[j];
                }
            }
            apply_lumen_rules_to(&mut values, &model.schema);
            log_transform_values(&mut values, &model.schema).map_err(|j| {
                Error::Validation(format!("landmark {}: `{}` must be positive", r.s, model.schema.get(j).name))
            })?;
            Ok(StackedRow {
                episode_id: r.episode_id,
                admission_id: r.admission_id,
                s: r.s,
                values,
                event_time: r.event_time,
                event_type: r.event_type,
            })
        })
        .collect::<Result<_>>()?;
    let completions = model.apply_row(&rows)?;
    let width = completions[0].len();
    let mean = (0..width).map(|j| completions.iter().map(|c| c[j]).sum::<f64>() / completions.len() as f64).collect();
    Ok(BedsideImputation {
        strategy: model.strategy.to_string(),
        episode_id: first.episode_id,
        landmark: rows.last().expect("nonempty").s,
        columns: model.output_schema()?.names().map(str::to_string).collect(),
        completions,
        mean,
    })
}
