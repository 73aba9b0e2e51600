//! Predictive mean matching.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Observed donors sorted by model prediction, ties by original index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DonorPool {
    preds: Vec<f64>,
    values: Vec<f64>,
    index: Vec<u32>,
}

impl DonorPool {
    pub fn new(preds: &[f64], values: &[f64]) -> Result<Self> {
        if preds.len() != values.len() {
            return Err(Error::Validation("donor predictions and values differ in length".into()));
        }
        if preds.is_empty() {
            return Err(Error::Unimputable("no donors with observed values".into()));
        }
        let mut order: Vec<u32> = (0..preds.len() as u32).collect();
        order.sort_by(|&a, &b| preds[a as usize].total_cmp(&preds[b as usize]).then(a.cmp(&b)));
        Ok(Self {
            preds: order.iter().map(|&i| preds[i as usize]).collect(),
            values: order.iter().map(|&i| values[i as usize]).collect(),
            index: order,
        })
    }

    pub fn len(&self) -> usize {
        self.preds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.preds.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Sorted positions of the `k` donors nearest `target`.
    pub fn nearest(&self, target: f64, k: usize) -> Vec<usize> {
        let n = self.len();
        let k = k.clamp(1, n);
        let pos = self.preds.partition_point(|&p| p < target);
        // distance of the k-th nearest donor
        let (mut lo, mut hi) = (pos, pos);
        let mut kth = 0.0;
        for _ in 0..k {
            let dl = if lo > 0 { target - self.preds[lo - 1] } else { f64::INFINITY };
            let dh = if hi < n { self.preds[hi] - target } else { f64::INFINITY };
            if dl <= dh {
                lo -= 1;
                kth = dl;
            } else {
                hi += 1;
                kth = dh;
            }
        }
        while lo > 0 && target - self.preds[lo - 1] <= kth {
            lo -= 1;
        }
        while hi < n && self.preds[hi] - target <= kth {
            hi += 1;
        }
        let mut within: Vec<usize> = (lo..hi).collect();
        within.sort_by(|&a, &b| {
            let (da, db) = ((self.preds[a] - target).abs(), (self.preds[b] - target).abs());
            da.total_cmp(&db).then(self.index[a].cmp(&self.index[b]))
        });
        within.truncate(k);
        within
    }

    pub fn draw(&self, target: f64, k: usize, rng: &mut Rng) -> f64 {
        let near = self.nearest(target, k);
        self.values[near[rng.gen_range(0..near.len())]]
    }
}

/// One donor value drawn uniformly among the `k` nearest predictions.
pub fn pmm_draw(target_pred: f64, donor_preds: &[f64], donor_values: &[f64], k: usize, rng: &mut Rng) -> Result<f64> {
    Ok(DonorPool::new(donor_preds, donor_values)?.draw(target_pred, k, rng))
}
