//! Generalized linear models by iteratively reweighted least squares.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Gaussian,
    /// Binomial with logit link.
    Binomial,
    /// Poisson with log link.
    Poisson,
}

impl Family {
    #[inline]
    pub fn inverse_link(self, eta: f64) -> f64 {
        match self {
            Family::Gaussian => eta,
            Family::Binomial => logistic(eta),
            Family::Poisson => eta.min(700.0).exp(),
        }
    }

    /// IRLS weight, i.e. the variance function at `mu` for canonical links.
    #[inline]
    pub fn weight(self, mu: f64) -> f64 {
        match self {
            Family::Gaussian => 1.0,
            Family::Binomial => (mu * (1.0 - mu)).max(1e-12),
            Family::Poisson => mu.max(1e-12),
        }
    }

    /// Log-likelihood contribution up to terms constant in the parameters.
    #[inline]
    pub fn log_likelihood(self, y: f64, eta: f64) -> f64 {
        match self {
            Family::Gaussian => -0.5 * (y - eta) * (y - eta),
            Family::Binomial => y * eta - softplus(eta),
            Family::Poisson => y * eta - eta.min(700.0).exp(),
        }
    }
}

#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlmOptions {
    /// L2 penalty on slopes (never on the intercept).
    pub ridge: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub intercept: bool,
}

impl Default for GlmOptions {
    fn default() -> Self {
        Self { ridge: 1e-6, max_iter: 50, tol: 1e-8, intercept: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmFit {
    pub family: Family,
    pub intercept: bool,
    /// Intercept first when `intercept` is set, then one slope per column.
    pub coefficients: Vec<f64>,
    pub converged: bool,
    /// Fitted probabilities collapsed onto the labels (complete separation).
    pub separated: bool,
    pub iterations: usize,
    /// Row-major covariance of the coefficients.
    pub covariance: Vec<f64>,
    pub dispersion: f64,
    pub ridge: f64,
}

impl GlmFit {
    pub fn n_coefficients(&self) -> usize {
        self.coefficients.len()
    }

    #[inline]
    pub fn linear_predictor(&self, row: &[f64]) -> f64 {
        linear_predictor_with(&self.coefficients, self.intercept, row)
    }

    #[inline]
    pub fn predict_mean(&self, row: &[f64]) -> f64 {
        self.family.inverse_link(self.linear_predictor(row))
    }

    /// Gradient of the penalized log-likelihood at the fitted coefficients.
    pub fn gradient(&self, x: &DMatrix<f64>, y: &[f64]) -> Vec<f64> {
        let k = self.coefficients.len();
        let off = usize::from(self.intercept);
        let mut g = vec![0.0; k];
        for i in 0..x.nrows() {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            let r = y[i] - self.predict_mean(&row);
            if self.intercept {
                g[0] += r;
            }
            for (j, v) in row.iter().enumerate() {
                g[off + j] += r * v;
            }
        }
        for j in off..k {
            g[j] -= self.ridge * self.coefficients[j];
        }
        g
    }
}

#[inline]
pub fn linear_predictor_with(coef: &[f64], intercept: bool, row: &[f64]) -> f64 {
    if intercept {
        coef[0] + coef[1..].iter().zip(row).map(|(b, x)| b * x).sum::<f64>()
    } else {
        coef.iter().zip(row).map(|(b, x)| b * x).sum()
    }
}

/// Fits `y ~ X` by penalized IRLS.
///
/// Converges when the largest coefficient change drops below `tol`. A binomial
/// fit whose probabilities collapse onto the labels is flagged `separated` and
/// reported as not converged rather than failing.
pub fn fit_glm(x: &DMatrix<f64>, y: &[f64], family: Family, opts: &GlmOptions) -> Result<GlmFit> {
    let n = x.nrows();
    if y.len() != n {
        return Err(Error::Validation(format!("design has {n} rows but response has {}", y.len())));
    }
    if n == 0 {
        return Err(Error::Validation("cannot fit a GLM to zero rows".into()));
    }
    match family {
        Family::Binomial if y.iter().any(|&v| v != 0.0 && v != 1.0) => {
            return Err(Error::Validation("binomial response must be 0/1".into()))
        }
        Family::Poisson if y.iter().any(|&v| v < 0.0 || v.fract() != 0.0) => {
            return Err(Error::Validation("poisson response must be a nonnegative integer".into()))
        }
        _ => {}
    }

    let off = usize::from(opts.intercept);
    let p = x.ncols();
    let k = p + off;
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut r = Vec::with_capacity(k);
            if opts.intercept {
                r.push(1.0);
            }
            r.extend(x.row(i).iter().copied());
            r
        })
        .collect();

    let ybar = y.iter().sum::<f64>() / n as f64;
    let mut beta = vec![0.0; k];
    if opts.intercept {
        beta[0] = match family {
            Family::Gaussian => ybar,
            Family::Binomial => logit(ybar.clamp(1e-4, 1.0 - 1e-4)),
            Family::Poisson => ybar.max(1e-4).ln(),
        };
    }

    let penalized_ll = |b: &[f64]| -> f64 {
        let ll: f64 = rows
            .iter()
            .zip(y)
            .map(|(r, &yi)| family.log_likelihood(yi, dot(b, r)))
            .sum();
        ll - 0.5 * opts.ridge * b[off..].iter().map(|v| v * v).sum::<f64>()
    };

    let mut converged = false;
    let mut iterations = 0;
    let mut info = DMatrix::<f64>::zeros(k, k);
    let mut current_ll = penalized_ll(&beta);
    for it in 1..=opts.max_iter {
        iterations = it;
        // Newton step: (X'WX + R) delta = X'(y - mu) - R beta
        info.fill(0.0);
        let mut score = DVector::<f64>::zeros(k);
        for (r, &yi) in rows.iter().zip(y) {
            let mu = family.inverse_link(dot(&beta, r));
            let w = family.weight(mu);
            let res = yi - mu;
            for a in 0..k {
                score[a] += res * r[a];
                let wa = w * r[a];
                for b in 0..=a {
                    info[(a, b)] += wa * r[b];
                }
            }
        }
        for a in 0..k {
            for b in 0..a {
                info[(b, a)] = info[(a, b)];
            }
        }
        for j in off..k {
            info[(j, j)] += opts.ridge;
            score[j] -= opts.ridge * beta[j];
        }
        let chol = info.clone().cholesky().ok_or_else(|| {
            Error::Singular(format!("information matrix is not positive definite (ridge {})", opts.ridge))
        })?;
        let delta = chol.solve(&score);

        let mut step = 1.0;
        let mut candidate: Vec<f64>;
        let mut cand_ll;
        let mut halvings = 0;
        loop {
            candidate = beta.iter().zip(delta.iter()).map(|(b, d)| b + step * d).collect();
            cand_ll = penalized_ll(&candidate);
            if cand_ll >= current_ll - 1e-10 * current_ll.abs().max(1.0) || halvings >= 30 {
                break;
            }
            step *= 0.5;
            halvings += 1;
        }
        let change = beta
            .iter()
            .zip(&candidate)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        beta = candidate;
        current_ll = cand_ll;
        if family == Family::Gaussian || change < opts.tol {
            converged = true;
            break;
        }
    }

    // refresh information at the final estimate for the covariance
    info.fill(0.0);
    let mut rss = 0.0;
    let mut separated = family == Family::Binomial;
    for (r, &yi) in rows.iter().zip(y) {
        let eta = dot(&beta, r);
        let mu = family.inverse_link(eta);
        if (yi - mu).abs() > 1e-3 {
            separated = false;
        }
        rss += (yi - mu) * (yi - mu);
        let w = family.weight(mu);
        for a in 0..k {
            for b in 0..k {
                info[(a, b)] += w * r[a] * r[b];
            }
        }
    }
    for j in off..k {
        info[(j, j)] += opts.ridge;
    }
    if separated {
        converged = false;
    }
    let dispersion = match family {
        Family::Gaussian => rss / (n.saturating_sub(k).max(1)) as f64,
        _ => 1.0,
    };
    let covariance = info
        .try_inverse()
        .map(|m| {
            let mut out = Vec::with_capacity(k * k);
            for a in 0..k {
                for b in 0..k {
                    out.push(m[(a, b)] * dispersion);
                }
            }
            out
        })
        .ok_or_else(|| Error::Singular("information matrix is not invertible".into()))?;

    Ok(GlmFit {
        family,
        intercept: opts.intercept,
        coefficients: beta,
        converged,
        separated,
        iterations,
        covariance,
        dispersion,
        ridge: opts.ridge,
    })
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn intercept_only_binomial_is_logit_of_mean() {
        let y = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        let x = DMatrix::<f64>::zeros(8, 0);
        let fit = fit_glm(&x, &y, Family::Binomial, &GlmOptions::default()).unwrap();
        assert!(fit.converged);
        assert_abs_diff_eq!(fit.coefficients[0], (0.25f64 / 0.75).ln(), epsilon = 1e-9);
        assert_abs_diff_eq!(fit.coefficients[0], -1.0986, epsilon = 1e-4);
    }

    #[test]
    fn two_by_two_table_gives_log_odds_ratio() {
        // group 0: 10 events out of 40, group 1: 30 events and 20 non-events
        let mut xs = Vec::new();
        let mut y = Vec::new();
        for (g, ev, non) in [(0.0, 10, 30), (1.0, 30, 20)] {
            for _ in 0..ev {
                xs.push(g);
                y.push(1.0);
            }
            for _ in 0..non {
                xs.push(g);
                y.push(0.0);
            }
        }
        let x = DMatrix::from_column_slice(xs.len(), 1, &xs);
        let opts = GlmOptions { ridge: 0.0, ..Default::default() };
        let fit = fit_glm(&x, &y, Family::Binomial, &opts).unwrap();
        let closed_form = ((30.0f64 * 30.0) / (20.0 * 10.0)).ln();
        assert_abs_diff_eq!(closed_form, 1.504, epsilon = 1e-3);
        assert_abs_diff_eq!(fit.coefficients[1], closed_form, epsilon = 1e-6);
    }

    #[test]
    fn gaussian_matches_least_squares() {
        let n = 50;
        let x1: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let x2: Vec<f64> = (0..n).map(|i| (i as f64 * 0.11).cos()).collect();
        let y: Vec<f64> = (0..n).map(|i| 1.0 + 2.0 * x1[i] - x2[i] + 0.1 * ((i * 7 % 5) as f64 - 2.0)).collect();
        let mut data = x1.clone();
        data.extend(&x2);
        let x = DMatrix::from_column_slice(n, 2, &data);
        let fit = fit_glm(&x, &y, Family::Gaussian, &GlmOptions { ridge: 0.0, ..Default::default() }).unwrap();

        let mut design = DMatrix::from_element(n, 3, 1.0);
        design.column_mut(1).copy_from(&x.column(0));
        design.column_mut(2).copy_from(&x.column(1));
        let ols = (design.transpose() * &design)
            .try_inverse()
            .unwrap()
            * design.transpose()
            * DVector::from_column_slice(&y);
        for j in 0..3 {
            assert_abs_diff_eq!(fit.coefficients[j], ols[j], epsilon = 1e-10);
        }
    }

    #[test]
    fn rank_deficient_without_ridge_is_singular() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0, 4.0, 8.0]);
        let y = [1.0, 2.0, 3.0, 4.0];
        let opts = GlmOptions { ridge: 0.0, ..Default::default() };
        assert!(matches!(fit_glm(&x, &y, Family::Gaussian, &opts), Err(Error::Singular(_))));
        assert!(fit_glm(&x, &y, Family::Gaussian, &GlmOptions::default()).is_ok());
    }

    #[test]
    fn separation_is_flagged_not_fatal() {
        let x = DMatrix::from_column_slice(6, 1, &[-3.0, -2.0, -1.0, 1.0, 2.0, 3.0]);
        let y = [0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let fit = fit_glm(&x, &y, Family::Binomial, &GlmOptions::default()).unwrap();
        assert!(!fit.converged);
        assert!(fit.separated);
    }

    #[test]
    fn converged_fits_have_vanishing_gradient() {
        let n = 300;
        let xs: Vec<f64> = (0..n).map(|i| ((i * 37 % 101) as f64) / 50.0 - 1.0).collect();
        let yb: Vec<f64> = xs.iter().enumerate().map(|(i, x)| f64::from((i * 13 % 7) as f64 / 7.0 < logistic(0.5 + x))).collect();
        let yp: Vec<f64> = xs.iter().enumerate().map(|(i, x)| ((1.0 + x).exp() + (i % 3) as f64).floor()).collect();
        let x = DMatrix::from_column_slice(n, 1, &xs);
        for (family, y) in [(Family::Binomial, &yb), (Family::Poisson, &yp)] {
            let fit = fit_glm(&x, y, family, &GlmOptions::default()).unwrap();
            assert!(fit.converged);
            let g = fit.gradient(&x, y);
            assert!(g.iter().all(|v| v.abs() < 1e-6), "{family:?} gradient {g:?}");
        }
    }
}
