//! Per-variable conditional models shared by regression imputation and MICE.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::datamodel::PredictorKind;
use crate::error::Result;
use crate::rng::Rng;
use crate::solvers::glm::dot;
use crate::solvers::{fit_glm, logistic, DonorPool, Family, GlmOptions};

/// Design for variable `var`: every other variable, the landmark, and the
/// outcome when present. No intercept column.
pub(crate) fn design_row(values: &[f64], var: usize, s: u32, outcome: Option<f64>, out: &mut Vec<f64>) {
    out.clear();
    out.extend(values.iter().enumerate().filter(|(j, _)| *j != var).map(|(_, v)| *v));
    out.push(f64::from(s));
    if let Some(y) = outcome {
        out.push(y);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalModel {
    pub var: usize,
    pub kind: PredictorKind,
    pub family: Family,
    /// Intercept first.
    pub coefficients: Vec<f64>,
    /// Row-major covariance of the coefficients.
    pub covariance: Vec<f64>,
    pub residual_df: f64,
    /// Observed training values ordered by point-estimate prediction.
    pub donors: Option<DonorPool>,
}

impl ConditionalModel {
    /// Fits `var` on the rows where it is observed.
    pub(crate) fn fit(
        var: usize,
        kind: PredictorKind,
        cur: &[Vec<f64>],
        s: &[u32],
        observed: &[bool],
        outcome: Option<&[f64]>,
        with_donors: bool,
    ) -> Result<Self> {
        let rows: Vec<usize> = (0..cur.len()).filter(|&i| observed[i]).collect();
        let width = cur.first().map_or(0, |r| r.len()) + usize::from(outcome.is_some());
        let mut x = DMatrix::<f64>::zeros(rows.len(), width);
        let mut y = Vec::with_capacity(rows.len());
        let mut buf = Vec::with_capacity(width);
        for (r, &i) in rows.iter().enumerate() {
            design_row(&cur[i], var, s[i], outcome.map(|o| o[i]), &mut buf);
            for (c, v) in buf.iter().enumerate() {
                x[(r, c)] = *v;
            }
            y.push(cur[i][var]);
        }
        let family = if kind == PredictorKind::Binary { Family::Binomial } else { Family::Gaussian };
        let fit = fit_glm(&x, &y, family, &GlmOptions::default())?;
        let donors = if with_donors && family == Family::Gaussian {
            let preds: Vec<f64> = (0..rows.len())
                .map(|r| {
                    buf.clear();
                    buf.extend((0..width).map(|c| x[(r, c)]));
                    fit.linear_predictor(&buf)
                })
                .collect();
            Some(DonorPool::new(&preds, &y)?)
        } else {
            None
        };
        Ok(Self {
            var,
            kind,
            family,
            residual_df: (rows.len() as f64 - fit.coefficients.len() as f64).max(1.0),
            coefficients: fit.coefficients,
            covariance: fit.covariance,
            donors,
        })
    }

    #[inline]
    pub fn predict_with(coef: &[f64], design: &[f64]) -> f64 {
        coef[0] + dot(&coef[1..], design)
    }

    /// Coefficient draw from the approximate posterior: residual variance
    /// from a scaled inverse chi-square for gaussian models, then normal.
    pub(crate) fn draw_coefficients(&self, rng: &mut Rng) -> Vec<f64> {
        let k = self.coefficients.len();
        let cov = DMatrix::from_row_slice(k, k, &self.covariance);
        let scale = match self.family {
            Family::Gaussian => {
                let chi: f64 = ChiSquared::new(self.residual_df).map_or(self.residual_df, |d| d.sample(rng));
                (self.residual_df / chi.max(1e-12)).sqrt()
            }
            _ => 1.0,
        };
        let mut jitter = 0.0;
        let chol = loop {
            let mut m = cov.clone();
            for d in 0..k {
                m[(d, d)] += jitter;
            }
            if let Some(c) = m.cholesky() {
                break Some(c);
            }
            jitter = if jitter == 0.0 { 1e-12 } else { jitter * 10.0 };
            if jitter > 1e-3 {
                break None;
            }
        };
        let z = DVector::<f64>::from_fn(k, |_, _| rng.sample(StandardNormal));
        match chol {
            Some(c) => {
                let dev = c.l() * z * scale;
                self.coefficients.iter().zip(dev.iter()).map(|(b, d)| b + d).collect()
            }
            None => self.coefficients.clone(),
        }
    }

    /// Stochastic imputation from a coefficient draw: a logistic draw for
    /// binaries, predictive mean matching otherwise.
    pub(crate) fn draw_value(&self, coef: &[f64], design: &[f64], k: usize, rng: &mut Rng) -> f64 {
        let eta = Self::predict_with(coef, design);
        match (&self.donors, self.family) {
            (_, Family::Binomial) => f64::from(rng.gen::<f64>() < logistic(eta)),
            (Some(pool), _) => pool.draw(eta, k, rng),
            (None, _) => eta,
        }
    }

    /// Deterministic imputation: the conditional mean for continuous
    /// variables, the likelier class for binaries and the nearest donor for
    /// counts and ordinals.
    pub(crate) fn mean_value(&self, design: &[f64]) -> f64 {
        let eta = Self::predict_with(&self.coefficients, design);
        match self.family {
            Family::Binomial => f64::from(logistic(eta) >= 0.5),
            _ => match (&self.donors, self.kind) {
                (Some(pool), PredictorKind::Count | PredictorKind::Ordinal) => pool.values()[pool.nearest(eta, 1)[0]],
                _ => eta,
            },
        }
    }
}

/// Variables missing somewhere in training, by ascending missing fraction.
pub(crate) fn visit_order(train: &crate::datamodel::StackedDataset) -> Vec<usize> {
    let frac = train.missing_fraction();
    let mut order: Vec<usize> = (0..frac.len()).filter(|&j| frac[j] > 0.0).collect();
    order.sort_by(|&a, &b| frac[a].total_cmp(&frac[b]).then(a.cmp(&b)));
    order
}
