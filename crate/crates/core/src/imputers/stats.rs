use serde::{Deserialize, Serialize};

use crate::datamodel::{PredictorSchema, StackedDataset};
use crate::error::{Error, Result};

/// Median of a nonempty slice (mean of the middle pair for even lengths).
pub(crate) fn median(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Most frequent value; ties go to the smallest.
pub(crate) fn mode(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    let (mut best, mut best_n) = (values[0], 0);
    let mut i = 0;
    while i < values.len() {
        let mut j = i;
        while j < values.len() && values[j] == values[i] {
            j += 1;
        }
        if j - i > best_n {
            best = values[i];
            best_n = j - i;
        }
        i = j;
    }
    best
}

pub(crate) fn summary(values: &mut [f64], discrete: bool) -> f64 {
    if discrete {
        mode(values)
    } else {
        median(values)
    }
}

/// Training median (continuous) or mode (discrete) per landmark, with the
/// pooled statistic as fallback.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkStats {
    pub first_landmark: u32,
    /// `[landmark - first][variable]`
    pub per_landmark: Vec<Vec<Option<f64>>>,
    pub pooled: Vec<f64>,
}

impl LandmarkStats {
    pub fn fit(train: &StackedDataset) -> Result<Self> {
        let schema = &train.schema;
        let first = train.first_landmark;
        let n_lm = (train.last_landmark.saturating_sub(first) + 1) as usize;
        let p = schema.len();
        let mut buckets: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); p]; n_lm];
        for row in &train.rows {
            let Some(k) = row.s.checked_sub(first).map(|k| k as usize).filter(|&k| k < n_lm) else { continue };
            for (j, v) in row.values.iter().enumerate() {
                if let Some(v) = v {
                    buckets[k][j].push(*v);
                }
            }
        }
        let mut pooled = Vec::with_capacity(p);
        for j in 0..p {
            let mut all: Vec<f64> = buckets.iter().flat_map(|b| b[j].iter().copied()).collect();
            if all.is_empty() {
                return Err(Error::Unimputable(format!("`{}` is never observed in training", schema.get(j).name)));
            }
            pooled.push(summary(&mut all, schema.get(j).kind.is_discrete()));
        }
        let per_landmark = buckets
            .into_iter()
            .map(|mut b| {
                b.iter_mut()
                    .enumerate()
                    .map(|(j, v)| (!v.is_empty()).then(|| summary(v, schema.get(j).kind.is_discrete())))
                    .collect()
            })
            .collect();
        Ok(Self { first_landmark: first, per_landmark, pooled })
    }

    pub fn at(&self, var: usize, s: u32) -> f64 {
        s.checked_sub(self.first_landmark)
            .and_then(|k| self.per_landmark.get(k as usize))
            .and_then(|row| row[var])
            .unwrap_or(self.pooled[var])
    }

    pub fn baseline(&self, var: usize) -> f64 {
        self.at(var, self.first_landmark)
    }
}

/// Global median/mode of every variable.
pub(crate) fn pooled_stats(train: &StackedDataset, schema: &PredictorSchema) -> Result<Vec<f64>> {
    (0..schema.len())
        .map(|j| {
            let mut v: Vec<f64> = train.rows.iter().filter_map(|r| r.values[j]).collect();
            if v.is_empty() {
                return Err(Error::Unimputable(format!("`{}` is never observed in training", schema.get(j).name)));
            }
            Ok(summary(&mut v, schema.get(j).kind.is_discrete()))
        })
        .collect()
}
