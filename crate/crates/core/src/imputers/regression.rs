use serde::{Deserialize, Serialize};

use super::chained::{design_row, visit_order, ConditionalModel};
use super::observed_or;
use super::stats::LandmarkStats;
use crate::datamodel::{StackedDataset, StackedRow};
use crate::error::Result;

/// One deterministic chained sweep, initialized at per-landmark medians/modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionState {
    pub init: LandmarkStats,
    /// Models in visit order.
    pub models: Vec<ConditionalModel>,
}

pub(super) fn fit(train: &StackedDataset) -> Result<(RegressionState, Vec<Vec<f64>>)> {
    let init = LandmarkStats::fit(train)?;
    let s: Vec<u32> = train.rows.iter().map(|r| r.s).collect();
    let mut cur: Vec<Vec<f64>> = train.rows.iter().map(|r| observed_or(&r.values, |j| init.at(j, r.s))).collect();
    let mut models = Vec::new();
    let mut buf = Vec::new();
    for j in visit_order(train) {
        let observed: Vec<bool> = train.rows.iter().map(|r| r.values[j].is_some()).collect();
        let kind = train.schema.get(j).kind;
        let model = ConditionalModel::fit(j, kind, &cur, &s, &observed, None, kind.is_discrete())?;
        for (i, row) in cur.iter_mut().enumerate() {
            if !observed[i] {
                design_row(row, j, s[i], None, &mut buf);
                row[j] = model.mean_value(&buf);
            }
        }
        models.push(model);
    }
    Ok((RegressionState { init, models }, cur))
}

pub(super) fn apply(state: &RegressionState, rows: &[StackedRow]) -> Vec<Vec<f64>> {
    let mut buf = Vec::new();
    rows.iter()
        .map(|r| {
            let mut cur = observed_or(&r.values, |j| state.init.at(j, r.s));
            for model in &state.models {
                if r.values[model.var].is_none() {
                    design_row(&cur, model.var, r.s, None, &mut buf);
                    cur[model.var] = model.mean_value(&buf);
                }
            }
            cur
        })
        .collect()
}
