//! Cox proportional hazards by Newton–Raphson on the Breslow partial likelihood.
//!
//! Rows may enter the risk set late (`entry`), which is how stacked landmark
//! rows are handled: a row is at risk at `t` when `entry < t <= stop`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct CoxData<'a> {
    pub entry: Option<&'a [f64]>,
    pub stop: &'a [f64],
    pub status: &'a [bool],
    /// n × p covariates.
    pub x: &'a DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoxOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub ridge: f64,
}

impl Default for CoxOptions {
    fn default() -> Self {
        Self { max_iter: 50, tol: 1e-8, ridge: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxFit {
    pub coefficients: Vec<f64>,
    /// Column means subtracted before fitting; the baseline refers to
    /// `beta . (z - center)`.
    pub center: Vec<f64>,
    /// Diagonal of the observed information at the estimate. Zero marks a
    /// direction the data cannot identify (coefficient held at 0).
    pub information: Vec<f64>,
    pub log_partial_likelihood: f64,
    pub iterations: usize,
    /// Distinct event times, strictly increasing.
    pub event_times: Vec<f64>,
    /// Breslow baseline hazard increments at `event_times`.
    pub baseline_increments: Vec<f64>,
    pub n_events: usize,
}

impl CoxFit {
    #[inline]
    pub fn linear_predictor(&self, z: &[f64]) -> f64 {
        self.coefficients
            .iter()
            .zip(&self.center)
            .zip(z)
            .map(|((b, c), v)| b * (v - c))
            .sum()
    }

    pub fn cumulative_baseline(&self, upto: f64) -> f64 {
        self.event_times
            .iter()
            .zip(&self.baseline_increments)
            .take_while(|(t, _)| **t <= upto)
            .map(|(_, h)| h)
            .sum()
    }
}

struct Prepared {
    p: usize,
    /// Row-major centered covariates.
    z: Vec<f64>,
    center: Vec<f64>,
    status: Vec<bool>,
    /// Distinct event times, ascending.
    times: Vec<f64>,
    /// Event rows grouped by `times` index.
    events_at: Vec<Vec<usize>>,
    stop: Vec<f64>,
    entry: Vec<f64>,
    by_stop_desc: Vec<usize>,
    by_entry_desc: Vec<usize>,
}

struct Evaluation {
    loglik: f64,
    gradient: DVector<f64>,
    information: DMatrix<f64>,
}

impl Prepared {
    fn new(data: &CoxData<'_>) -> Result<Self> {
        let n = data.stop.len();
        let p = data.x.ncols();
        if data.status.len() != n || data.x.nrows() != n || data.entry.is_some_and(|e| e.len() != n) {
            return Err(Error::Validation("cox inputs have mismatched lengths".into()));
        }
        let entry: Vec<f64> = data.entry.map_or_else(|| vec![f64::NEG_INFINITY; n], <[f64]>::to_vec);
        for i in 0..n {
            if !(data.stop[i] > entry[i]) || !data.stop[i].is_finite() {
                return Err(Error::Validation(format!(
                    "row {i}: stop time {} must exceed entry {}",
                    data.stop[i], entry[i]
                )));
            }
        }
        let n_events = data.status.iter().filter(|&&s| s).count();
        if n_events == 0 {
            return Err(Error::NoEvents("cox model has no events".into()));
        }
        let center: Vec<f64> = (0..p).map(|j| data.x.column(j).mean()).collect();
        let mut z = Vec::with_capacity(n * p);
        for i in 0..n {
            for j in 0..p {
                z.push(data.x[(i, j)] - center[j]);
            }
        }

        let mut event_rows: Vec<usize> = (0..n).filter(|&i| data.status[i]).collect();
        event_rows.sort_by(|&a, &b| data.stop[a].total_cmp(&data.stop[b]).then(a.cmp(&b)));
        let mut times: Vec<f64> = Vec::new();
        let mut events_at: Vec<Vec<usize>> = Vec::new();
        for i in event_rows {
            let t = data.stop[i];
            if times.last() == Some(&t) {
                events_at.last_mut().expect("nonempty").push(i);
            } else {
                times.push(t);
                events_at.push(vec![i]);
            }
        }
        let mut by_stop_desc: Vec<usize> = (0..n).collect();
        by_stop_desc.sort_by(|&a, &b| data.stop[b].total_cmp(&data.stop[a]).then(a.cmp(&b)));
        let mut by_entry_desc: Vec<usize> = (0..n).collect();
        by_entry_desc.sort_by(|&a, &b| entry[b].total_cmp(&entry[a]).then(a.cmp(&b)));

        Ok(Self {
            p,
            z,
            center,
            status: data.status.to_vec(),
            times,
            events_at,
            stop: data.stop.to_vec(),
            entry,
            by_stop_desc,
            by_entry_desc,
        })
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        &self.z[i * self.p..(i + 1) * self.p]
    }

    /// Largest linear predictor; risk weights are computed relative to it.
    fn max_eta(&self, beta: &[f64]) -> f64 {
        (0..self.stop.len()).map(|i| dot(beta, self.row(i))).fold(0.0, f64::max)
    }

    /// Sweeps event times from last to first, maintaining risk-set sums of
    /// `exp(eta - max_eta)`. Calls `visit(k, s0, s1, s2)` at each distinct
    /// event time.
    fn sweep<F>(&self, beta: &[f64], second_order: bool, mut visit: F)
    where
        F: FnMut(usize, f64, &[f64], &[f64]),
    {
        let p = self.p;
        let mut s0 = 0.0;
        let mut s1 = vec![0.0; p];
        let mut s2 = vec![0.0; if second_order { p * p } else { 0 }];
        let (mut ai, mut ri) = (0, 0);
        let n = self.stop.len();
        let shift = self.max_eta(beta);

        let update = |i: usize, sign: f64, s0: &mut f64, s1: &mut [f64], s2: &mut [f64]| {
            let zi = self.row(i);
            let w = sign * (dot(beta, zi) - shift).exp();
            *s0 += w;
            for a in 0..p {
                let wa = w * zi[a];
                s1[a] += wa;
                if second_order {
                    for b in 0..=a {
                        s2[a * p + b] += wa * zi[b];
                    }
                }
            }
        };

        for k in (0..self.times.len()).rev() {
            let t = self.times[k];
            while ai < n && self.stop[self.by_stop_desc[ai]] >= t {
                update(self.by_stop_desc[ai], 1.0, &mut s0, &mut s1, &mut s2);
                ai += 1;
            }
            while ri < n && self.entry[self.by_entry_desc[ri]] >= t {
                update(self.by_entry_desc[ri], -1.0, &mut s0, &mut s1, &mut s2);
                ri += 1;
            }
            visit(k, s0, &s1, &s2);
        }
    }

    fn evaluate(&self, beta: &[f64], ridge: f64) -> Evaluation {
        let p = self.p;
        let mut loglik = 0.0;
        let mut gradient = DVector::<f64>::zeros(p);
        let mut information = DMatrix::<f64>::zeros(p, p);
        let shift = self.max_eta(beta);
        self.sweep(beta, true, |k, s0, s1, s2| {
            let events = &self.events_at[k];
            let d = events.len() as f64;
            for &i in events {
                let zi = self.row(i);
                loglik += dot(beta, zi);
                for a in 0..p {
                    gradient[a] += zi[a];
                }
            }
            loglik -= d * (s0.ln() + shift);
            for a in 0..p {
                let ma = s1[a] / s0;
                gradient[a] -= d * ma;
                for b in 0..=a {
                    let v = d * (s2[a * p + b] / s0 - ma * s1[b] / s0);
                    information[(a, b)] += v;
                }
            }
        });
        for a in 0..p {
            for b in 0..a {
                information[(b, a)] = information[(a, b)];
            }
            loglik -= 0.5 * ridge * beta[a] * beta[a];
            gradient[a] -= ridge * beta[a];
            information[(a, a)] += ridge;
        }
        Evaluation { loglik, gradient, information }
    }

    fn loglik(&self, beta: &[f64], ridge: f64) -> f64 {
        let mut ll = 0.0;
        let shift = self.max_eta(beta);
        self.sweep(beta, false, |k, s0, _, _| {
            let events = &self.events_at[k];
            for &i in events {
                ll += dot(beta, self.row(i));
            }
            // cancellation in the risk-set sums can leave s0 <= 0
            ll -= events.len() as f64 * if s0 > 0.0 { s0.ln() + shift } else { f64::NAN };
        });
        ll - 0.5 * ridge * beta.iter().map(|b| b * b).sum::<f64>()
    }

    fn breslow(&self, beta: &[f64]) -> Vec<f64> {
        let mut inc = vec![0.0; self.times.len()];
        let scale = (-self.max_eta(beta)).exp();
        self.sweep(beta, false, |k, s0, _, _| {
            inc[k] = self.events_at[k].len() as f64 * scale / s0;
        });
        inc
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Breslow partial log-likelihood at `beta` (for oracles and diagnostics).
pub fn partial_log_likelihood(data: &CoxData<'_>, beta: &[f64]) -> Result<f64> {
    Ok(Prepared::new(data)?.loglik(beta, 0.0))
}

/// Breslow baseline increments for fixed coefficients, relative to the
/// centered linear predictor used by [`CoxFit`].
pub fn breslow_increments(data: &CoxData<'_>, beta: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let prep = Prepared::new(data)?;
    Ok((prep.times.clone(), prep.breslow(beta)))
}

pub fn fit_cox_breslow(data: &CoxData<'_>, opts: &CoxOptions) -> Result<CoxFit> {
    let prep = Prepared::new(data)?;
    let p = prep.p;
    let n_events = prep.status.iter().filter(|&&s| s).count();
    let mut beta = vec![0.0; p];

    let start = prep.evaluate(&beta, opts.ridge);
    let scale = (0..p).map(|j| start.information[(j, j)]).fold(1.0, f64::max);
    let active: Vec<usize> = (0..p)
        .filter(|&j| start.information[(j, j)] > 1e-12 * scale)
        .collect();

    let mut eval = start;
    let mut iterations = 0;
    let mut converged = active.is_empty();
    while !converged && iterations < opts.max_iter {
        iterations += 1;
        let m = active.len();
        let h = DMatrix::from_fn(m, m, |a, b| eval.information[(active[a], active[b])]);
        let g = DVector::from_fn(m, |a, _| eval.gradient[active[a]]);
        let delta = match h.clone().cholesky() {
            Some(ch) => ch.solve(&g),
            None => h
                .try_inverse()
                .map(|inv| inv * &g)
                .ok_or_else(|| Error::Singular("cox information matrix is singular".into()))?,
        };

        if delta.iter().any(|d| !d.is_finite()) {
            return Err(Error::Singular("non-finite cox newton step".into()));
        }
        let mut step = 1.0;
        let mut candidate = beta.clone();
        let mut cand_ll = f64::NEG_INFINITY;
        let mut accepted = false;
        for _ in 0..40 {
            candidate.clone_from(&beta);
            for (a, &j) in active.iter().enumerate() {
                candidate[j] += step * delta[a];
            }
            cand_ll = prep.loglik(&candidate, opts.ridge);
            if cand_ll.is_finite() && cand_ll >= eval.loglik - 1e-12 * eval.loglik.abs().max(1.0) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // no finite improving step: the likelihood is flat to machine precision here
            converged = true;
            break;
        }
        let change = beta
            .iter()
            .zip(&candidate)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let ll_change = (cand_ll - eval.loglik).abs() / eval.loglik.abs().max(1.0);
        beta = candidate;
        eval = prep.evaluate(&beta, opts.ridge);
        // The relative likelihood test stops monotone-likelihood drift.
        if change < opts.tol || ll_change < 1e-13 {
            converged = true;
        }
    }
    let finite = beta.iter().all(|b| b.is_finite()) && eval.loglik.is_finite();
    if !converged || !finite {
        let gradient_norm = eval.gradient.iter().map(|g| g * g).sum::<f64>().sqrt();
        return Err(Error::NotConverged { iterations, gradient_norm });
    }

    let information = (0..p)
        .map(|j| if active.contains(&j) { eval.information[(j, j)] } else { 0.0 })
        .collect();
    Ok(CoxFit {
        coefficients: beta.clone(),
        center: prep.center.clone(),
        information,
        log_partial_likelihood: eval.loglik,
        iterations,
        event_times: prep.times.clone(),
        baseline_increments: prep.breslow(&beta),
        n_events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn toy() -> (Vec<f64>, Vec<bool>, DMatrix<f64>) {
        let stop = vec![2.0, 3.0, 3.0, 5.0, 6.0, 7.0, 8.0, 9.0];
        let status = vec![true, true, false, true, true, false, true, true];
        let x = DMatrix::from_column_slice(8, 1, &[1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0]);
        (stop, status, x)
    }

    #[test]
    fn zero_events_is_an_error() {
        let x = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let data = CoxData { entry: None, stop: &[1.0, 2.0], status: &[false, false], x: &x };
        assert!(matches!(fit_cox_breslow(&data, &CoxOptions::default()), Err(Error::NoEvents(_))));
    }

    #[test]
    fn constant_covariate_gets_zero_and_no_information() {
        let (stop, status, _) = toy();
        let x = DMatrix::from_element(8, 1, 3.0);
        let data = CoxData { entry: None, stop: &stop, status: &status, x: &x };
        let fit = fit_cox_breslow(&data, &CoxOptions::default()).unwrap();
        assert_eq!(fit.coefficients, vec![0.0]);
        assert_eq!(fit.information, vec![0.0]);
    }

    #[test]
    fn zero_coefficient_baseline_is_nelson_aalen() {
        let (stop, status, x) = toy();
        let data = CoxData { entry: None, stop: &stop, status: &status, x: &x };
        let (times, inc) = breslow_increments(&data, &[0.0]).unwrap();
        // at-risk counts at each distinct event time
        let at_risk = [8.0, 7.0, 5.0, 4.0, 2.0, 1.0];
        let deaths = [1.0, 1.0, 1.0, 1.0, 1.0, 1.0];
        assert_eq!(times, vec![2.0, 3.0, 5.0, 6.0, 8.0, 9.0]);
        for k in 0..6 {
            assert_abs_diff_eq!(inc[k], deaths[k] / at_risk[k], epsilon = 1e-14);
        }
    }

    #[test]
    fn late_entry_shrinks_risk_sets() {
        let stop = [2.0, 4.0, 6.0];
        let entry = [0.0, 3.0, 0.0];
        let status = [true, true, true];
        let x = DMatrix::zeros(3, 0);
        let data = CoxData { entry: Some(&entry), stop: &stop, status: &status, x: &x };
        let (_, inc) = breslow_increments(&data, &[]).unwrap();
        // t=2: rows 0 and 2 at risk (row 1 enters at 3)
        assert_abs_diff_eq!(inc[0], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(inc[1], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(inc[2], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn estimate_is_a_local_maximum() {
        let (stop, status, _) = toy();
        let x = DMatrix::from_row_slice(8, 2, &[
            1.0, 0.3, 0.0, 1.2, 1.0, -0.4, 1.0, 0.8, 0.0, -1.0, 0.0, 0.1, 1.0, 0.5, 0.0, -0.2,
        ]);
        let data = CoxData { entry: None, stop: &stop, status: &status, x: &x };
        let fit = fit_cox_breslow(&data, &CoxOptions::default()).unwrap();
        let best = partial_log_likelihood(&data, &fit.coefficients).unwrap();
        assert_abs_diff_eq!(best, fit.log_partial_likelihood, epsilon = 1e-10);
        for j in 0..2 {
            for d in [-0.01, 0.01] {
                let mut b = fit.coefficients.clone();
                b[j] += d;
                assert!(partial_log_likelihood(&data, &b).unwrap() <= best);
            }
        }
    }
}
