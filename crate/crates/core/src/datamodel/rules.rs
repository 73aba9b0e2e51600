//! Deterministic rewrites applied before imputation: lumen rules and log transforms.

use super::episode::LandmarkRow;
use super::schema::PredictorSchema;
use super::stack::StackedDataset;
use crate::error::{Error, Result};

/// Lumen counts follow their catheter type: 0 when the type is absent, and the
/// fixed count (if any) when it is present.
pub fn apply_lumen_rules_to(values: &mut [Option<f64>], schema: &PredictorSchema) {
    for (j, p) in schema.predictors().iter().enumerate() {
        let Some(link) = &p.linked_catheter_type else { continue };
        let Some(t) = schema.index_of(link) else { continue };
        match values[t] {
            Some(v) if v == 0.0 => values[j] = Some(0.0),
            Some(v) if v == 1.0 => {
                if let Some(fixed) = p.fixed_lumens {
                    values[j] = Some(fixed);
                }
            }
            _ => {}
        }
    }
}

pub fn apply_lumen_rules(row: &LandmarkRow, schema: &PredictorSchema) -> LandmarkRow {
    let mut out = row.clone();
    apply_lumen_rules_to(&mut out.values, schema);
    out
}

pub fn apply_lumen_rules_dataset(data: &StackedDataset) -> StackedDataset {
    let mut out = data.clone();
    for row in &mut out.rows {
        apply_lumen_rules_to(&mut row.values, &data.schema);
    }
    out
}

/// Natural log of every observed value on a log-flagged predictor.
/// On failure returns the offending predictor index.
pub fn log_transform_values(values: &mut [Option<f64>], schema: &PredictorSchema) -> std::result::Result<(), usize> {
    for (j, p) in schema.predictors().iter().enumerate() {
        if !p.log_transform {
            continue;
        }
        if let Some(v) = values[j] {
            if !(v > 0.0) {
                return Err(j);
            }
            values[j] = Some(v.ln());
        }
    }
    Ok(())
}

pub fn exp_transform_values(values: &mut [f64], schema: &PredictorSchema) {
    for (j, p) in schema.predictors().iter().enumerate() {
        if p.log_transform {
            values[j] = values[j].exp();
        }
    }
}

pub fn transform_labs(data: &StackedDataset) -> Result<StackedDataset> {
    let mut out = data.clone();
    for row in &mut out.rows {
        log_transform_values(&mut row.values, &data.schema).map_err(|j| {
            Error::Validation(format!(
                "episode {} landmark {}: `{}` = {} cannot be log-transformed",
                row.episode_id,
                row.s,
                data.schema.get(j).name,
                row.values[j].unwrap_or(f64::NAN)
            ))
        })?;
    }
    Ok(out)
}

pub fn inverse_transform_labs(data: &StackedDataset) -> StackedDataset {
    let mut out = data.clone();
    for row in &mut out.rows {
        for (j, p) in data.schema.predictors().iter().enumerate() {
            if p.log_transform {
                row.values[j] = row.values[j].map(f64::exp);
            }
        }
    }
    out
}
