use serde::{Deserialize, Serialize};

use crate::datamodel::{Predictor, PredictorKind, PredictorSchema, StackedDataset};
use crate::error::Result;

pub const DEFAULT_INDICATOR_FILL: f64 = 99.0;

/// Which predictors feed each missing-indicator column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorLayout {
    pub columns: Vec<IndicatorColumn>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorColumn {
    pub name: String,
    pub members: Vec<usize>,
}

impl IndicatorLayout {
    /// One column per predictor missing somewhere in `train`; grouped
    /// predictors share a column.
    pub fn from_training(train: &StackedDataset) -> Self {
        let schema = &train.schema;
        let missing = train.missing_fraction();
        let mut columns: Vec<IndicatorColumn> = Vec::new();
        for (j, pred) in schema.predictors().iter().enumerate() {
            if missing[j] == 0.0 {
                continue;
            }
            match &pred.indicator_group {
                Some(group) => {
                    let name = format!("{group}_missing");
                    match columns.iter_mut().find(|c| c.name == name) {
                        Some(c) => c.members.push(j),
                        None => columns.push(IndicatorColumn { name, members: vec![j] }),
                    }
                }
                None => columns.push(IndicatorColumn { name: format!("{}_missing", pred.name), members: vec![j] }),
            }
        }
        Self { columns }
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    /// Indicator values for one row: 1 iff any member is missing.
    pub fn indicators(&self, values: &[Option<f64>]) -> impl Iterator<Item = f64> + '_ {
        let values = values.to_vec();
        self.columns
            .iter()
            .map(move |c| f64::from(c.members.iter().any(|&j| values[j].is_none())))
    }

    /// Input schema followed by one binary predictor per indicator.
    pub fn extend_schema(&self, schema: &PredictorSchema) -> Result<PredictorSchema> {
        let mut preds = schema.predictors().to_vec();
        preds.extend(self.columns.iter().map(|c| Predictor::new(&c.name, PredictorKind::Binary)));
        PredictorSchema::new(preds)
    }
}

/// Missing-indicator augmentation: indicators appended, gaps filled with `fill`.
pub fn augment_missing_indicators(data: &StackedDataset, layout: &IndicatorLayout, fill: f64) -> Result<StackedDataset> {
    let schema = layout.extend_schema(&data.schema)?;
    let rows = data
        .rows
        .iter()
        .map(|r| {
            let mut out = r.clone();
            out.values = r.values.iter().map(|v| Some(v.unwrap_or(fill))).chain(layout.indicators(&r.values).map(Some)).collect();
            out
        })
        .collect();
    let mut out = data.with_rows(rows);
    out.schema = schema;
    Ok(out)
}
