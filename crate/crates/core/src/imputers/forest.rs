use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::chained::visit_order;
use super::stats::pooled_stats;
use super::{observed_or, ImputerConfig};
use crate::datamodel::{PredictorKind, StackedDataset, StackedRow};
use crate::error::Result;
use crate::rng::{derive_seed, tag_hash};
use crate::solvers::{fit_forest, ForestFit, ForestKind, ForestOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestState {
    /// Global median/mode start values.
    pub init: Vec<f64>,
    /// Modelled variables in visit order.
    pub order: Vec<usize>,
    /// Kept iterations, each with one forest per modelled variable.
    pub iterations: Vec<Vec<ForestFit>>,
    /// OOB NMSE per run iteration (including a rejected final one).
    pub nmse: Vec<Vec<f64>>,
}

fn features(cur: &[f64], var: usize, s: u32, out: &mut Vec<f64>) {
    out.clear();
    out.extend(cur.iter().enumerate().filter(|(j, _)| *j != var).map(|(_, v)| *v));
    out.push(f64::from(s));
}

pub(super) fn fit(train: &StackedDataset, cfg: &ImputerConfig, seed: u64) -> Result<(ForestState, Vec<Vec<f64>>)> {
    let schema = &train.schema;
    let init = pooled_stats(train, schema)?;
    let mut cur: Vec<Vec<f64>> = train.rows.iter().map(|r| observed_or(&r.values, |j| init[j])).collect();
    // constant variables keep their constant
    let order: Vec<usize> = visit_order(train)
        .into_iter()
        .filter(|&j| {
            let mut obs = train.rows.iter().filter_map(|r| r.values[j]);
            let first = obs.next();
            obs.any(|v| Some(v) != first)
        })
        .collect();
    let p = schema.len();
    let mut iterations = Vec::new();
    let mut nmse_log = Vec::new();
    let mut previous = f64::INFINITY;
    let mut buf = Vec::with_capacity(p);
    for it in 0..cfg.forest_maxiter.max(1) {
        let snapshot = cur.clone();
        let mut forests = Vec::with_capacity(order.len());
        let mut nmse = Vec::with_capacity(order.len());
        for &j in &order {
            let obs: Vec<usize> = (0..cur.len()).filter(|&i| train.rows[i].values[j].is_some()).collect();
            let x = DMatrix::<f64>::from_fn(obs.len(), p, |r, c| {
                let i = obs[r];
                match c.cmp(&j) {
                    std::cmp::Ordering::Less => cur[i][c],
                    _ if c + 1 < p => cur[i][c + 1],
                    _ => f64::from(train.rows[i].s),
                }
            });
            let y: Vec<f64> = obs.iter().map(|&i| cur[i][j]).collect();
            let kind = if schema.get(j).kind == PredictorKind::Binary { ForestKind::Classification } else { ForestKind::Regression };
            let opts = ForestOptions {
                ntrees: cfg.ntrees,
                seed: derive_seed(seed, &[tag_hash("missforest"), it as u64, j as u64]),
                execution: cfg.execution,
                ..Default::default()
            };
            let forest = fit_forest(&x, &y, kind, &opts)?;
            for (i, row) in cur.iter_mut().enumerate() {
                if train.rows[i].values[j].is_none() {
                    features(row, j, train.rows[i].s, &mut buf);
                    row[j] = forest.predict(&buf);
                }
            }
            nmse.push(forest.oob_nmse);
            forests.push(forest);
        }
        let total: f64 = nmse.iter().sum();
        nmse_log.push(nmse);
        if total > previous {
            cur = snapshot;
            break;
        }
        previous = total;
        iterations.push(forests);
        if order.is_empty() {
            break;
        }
    }
    Ok((ForestState { init, order, iterations, nmse: nmse_log }, cur))
}

/// Replays the kept iterations on each row.
pub(super) fn apply(state: &ForestState, rows: &[StackedRow]) -> Vec<Vec<f64>> {
    let mut buf = Vec::new();
    rows.iter()
        .map(|r| {
            let mut cur = observed_or(&r.values, |j| state.init[j]);
            for forests in &state.iterations {
                for (forest, &j) in forests.iter().zip(&state.order) {
                    if r.values[j].is_none() {
                        features(&cur, j, r.s, &mut buf);
                        cur[j] = forest.predict(&buf);
                    }
                }
            }
            cur
        })
        .collect()
}
