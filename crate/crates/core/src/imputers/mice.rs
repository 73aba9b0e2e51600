use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::chained::{design_row, visit_order, ConditionalModel};
use super::stats::LandmarkStats;
use super::{observed_or, ImputerConfig};
use crate::datamodel::{EventType, PredictorKind, StackedDataset, StackedRow};
use crate::error::Result;
use crate::rng::{substream, tag_hash};
use crate::solvers::logistic;

/// Whether the outcome enters the imputation models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeMode {
    /// Outcome excluded everywhere.
    Xx,
    /// Outcome used in training; imputed at apply, then discarded.
    Yx,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiceCompletion {
    /// Final-iteration models in visit order.
    pub models: Vec<ConditionalModel>,
    pub outcome: Option<ConditionalModel>,
    /// Coefficient draws used by the apply sweeps, `[sweep][model]`.
    pub draws: Vec<Vec<Vec<f64>>>,
    pub outcome_draws: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiceState {
    pub m: usize,
    pub maxit: usize,
    pub pmm_k: usize,
    pub mode: OutcomeMode,
    pub init: LandmarkStats,
    pub order: Vec<usize>,
    pub completions: Vec<MiceCompletion>,
    /// Mean of the imputed values, `[completion][iteration][model]`.
    pub chain_means: Vec<Vec<Vec<f64>>>,
}

fn outcome_vector(train: &StackedDataset) -> Vec<f64> {
    train.rows.iter().map(|r| f64::from(r.had_event(EventType::Clabsi))).collect()
}

/// `values` followed by the outcome, so the outcome model can reuse
/// `ConditionalModel` with the outcome as its response.
fn with_outcome(cur: &[Vec<f64>], y: &[f64]) -> Vec<Vec<f64>> {
    cur.iter().zip(y).map(|(r, &v)| r.iter().copied().chain(std::iter::once(v)).collect()).collect()
}

pub(super) fn fit(
    train: &StackedDataset,
    cfg: &ImputerConfig,
    mode: OutcomeMode,
    seed: u64,
) -> Result<(MiceState, Vec<Vec<Vec<f64>>>)> {
    let init = LandmarkStats::fit(train)?;
    let p = train.schema.len();
    let order = visit_order(train);
    let s: Vec<u32> = train.rows.iter().map(|r| r.s).collect();
    let y = (mode == OutcomeMode::Yx).then(|| outcome_vector(train));
    let observed: Vec<Vec<bool>> =
        (0..p).map(|j| train.rows.iter().map(|r| r.values[j].is_some()).collect()).collect();
    let pools: Vec<Vec<f64>> = (0..p).map(|j| train.rows.iter().filter_map(|r| r.values[j]).collect()).collect();

    let chains = cfg.execution.map_range(cfg.m, |c| -> Result<_> {
        let mut init_rng = substream(seed, &[tag_hash("mice-init"), c as u64]);
        let mut cur: Vec<Vec<f64>> = train
            .rows
            .iter()
            .map(|r| observed_or(&r.values, |j| *pools[j].choose(&mut init_rng).expect("observed in training")))
            .collect();
        let mut buf = Vec::new();
        let mut means = Vec::with_capacity(cfg.maxit);
        let mut models = Vec::new();
        for it in 0..cfg.maxit {
            let mut it_means = Vec::with_capacity(order.len());
            let last = it + 1 == cfg.maxit;
            for &j in &order {
                let kind = train.schema.get(j).kind;
                let model = ConditionalModel::fit(j, kind, &cur, &s, &observed[j], y.as_deref(), kind != PredictorKind::Binary)?;
                let mut rng = substream(seed, &[tag_hash("mice-train"), c as u64, it as u64, j as u64]);
                let beta = model.draw_coefficients(&mut rng);
                let (mut sum, mut n) = (0.0, 0usize);
                for i in 0..cur.len() {
                    if !observed[j][i] {
                        design_row(&cur[i], j, s[i], y.as_ref().map(|y| y[i]), &mut buf);
                        let v = model.draw_value(&beta, &buf, cfg.pmm_k, &mut rng);
                        cur[i][j] = v;
                        sum += v;
                        n += 1;
                    }
                }
                it_means.push(sum / n.max(1) as f64);
                if last {
                    models.push(model);
                }
            }
            means.push(it_means);
        }
        let outcome = match &y {
            Some(y) => Some(ConditionalModel::fit(p, PredictorKind::Binary, &with_outcome(&cur, y), &s, &vec![true; cur.len()], None, false)?),
            None => None,
        };
        let draws = (0..cfg.maxit)
            .map(|it| {
                models
                    .iter()
                    .map(|m| m.draw_coefficients(&mut substream(seed, &[tag_hash("mice-apply"), c as u64, it as u64, m.var as u64])))
                    .collect()
            })
            .collect();
        let outcome_draws = match &outcome {
            Some(o) => (0..cfg.maxit)
                .map(|it| o.draw_coefficients(&mut substream(seed, &[tag_hash("mice-apply-outcome"), c as u64, it as u64])))
                .collect(),
            None => Vec::new(),
        };
        Ok((MiceCompletion { models, outcome, draws, outcome_draws }, means, cur))
    });

    let mut completions = Vec::with_capacity(cfg.m);
    let mut chain_means = Vec::with_capacity(cfg.m);
    let mut values = Vec::with_capacity(cfg.m);
    for chain in chains {
        let (comp, means, cur) = chain?;
        completions.push(comp);
        chain_means.push(means);
        values.push(cur);
    }
    let state = MiceState { m: cfg.m, maxit: cfg.maxit, pmm_k: cfg.pmm_k, mode, init, order, completions, chain_means };
    Ok((state, values))
}

/// Fresh chained sweeps per row and completion with the frozen models,
/// starting from the training medians/modes.
pub(super) fn apply(state: &MiceState, seed: u64, rows: &[StackedRow]) -> Vec<Vec<Vec<f64>>> {
    let mut buf = Vec::new();
    state
        .completions
        .iter()
        .enumerate()
        .map(|(c, comp)| {
            rows.iter()
                .map(|r| {
                    let mut cur = observed_or(&r.values, |j| state.init.at(j, r.s));
                    if r.values.iter().all(Option::is_some) {
                        return cur;
                    }
                    let mut rng = substream(seed, &[tag_hash("mice-row"), r.episode_id, u64::from(r.s), c as u64]);
                    let mut outcome = comp.outcome.as_ref().map(|_| 0.0);
                    for it in 0..state.maxit {
                        if let (Some(o), Some(y)) = (&comp.outcome, outcome.as_mut()) {
                            design_row(&cur, cur.len(), r.s, None, &mut buf);
                            let eta = ConditionalModel::predict_with(&comp.outcome_draws[it], &buf);
                            debug_assert_eq!(o.var, cur.len());
                            *y = f64::from(rng.gen::<f64>() < logistic(eta));
                        }
                        for (pos, model) in comp.models.iter().enumerate() {
                            let j = model.var;
                            if r.values[j].is_none() {
                                design_row(&cur, j, r.s, outcome, &mut buf);
                                cur[j] = model.draw_value(&comp.draws[it][pos], &buf, state.pmm_k, &mut rng);
                            }
                        }
                    }
                    cur
                })
                .collect()
        })
        .collect()
}
