//! Random-intercept mixed models.
//!
//! Gaussian responses use the profiled likelihood in the variance ratio
//! `tau = sigma_u^2 / sigma_e^2`, which has closed forms for the fixed effects
//! and residual variance at each `tau`. Binomial and Poisson responses use the
//! Laplace approximation to the marginal likelihood: posterior modes of the
//! intercepts are found per group, the fixed effects are fitted by Newton
//! steps on the approximate likelihood, and `sigma_u` by a bounded 1-D search.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::glm::{dot, Family};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixedOptions {
    pub ridge: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for MixedOptions {
    fn default() -> Self {
        Self { ridge: 1e-6, max_iter: 50, tol: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedFit {
    pub family: Family,
    /// Intercept, then one slope per design column.
    pub fixed_effects: Vec<f64>,
    pub sigma_u: f64,
    /// Residual SD, gaussian only.
    pub residual_sd: Option<f64>,
    /// Posterior mode of each training group's intercept, sorted by group id.
    pub blups: Vec<(u64, f64)>,
    pub warning: Option<String>,
}

impl MixedFit {
    #[inline]
    pub fn fixed_predictor(&self, row: &[f64]) -> f64 {
        self.fixed_effects[0] + dot(&self.fixed_effects[1..], row)
    }

    /// Stored intercept for a training group; 0 (the prior mean) otherwise.
    pub fn blup(&self, group: u64) -> f64 {
        self.blups
            .binary_search_by_key(&group, |(g, _)| *g)
            .map_or(0.0, |i| self.blups[i].1)
    }

    pub fn predict_mean(&self, row: &[f64], u: f64) -> f64 {
        self.family.inverse_link(self.fixed_predictor(row) + u)
    }
}

struct Groups {
    ids: Vec<u64>,
    /// Observation indices per group.
    members: Vec<Vec<usize>>,
}

fn group(ids: &[u64]) -> Groups {
    let mut index: HashMap<u64, usize> = HashMap::new();
    let mut out = Groups { ids: Vec::new(), members: Vec::new() };
    for (i, &g) in ids.iter().enumerate() {
        let k = *index.entry(g).or_insert_with(|| {
            out.ids.push(g);
            out.members.push(Vec::new());
            out.ids.len() - 1
        });
        out.members[k].push(i);
    }
    out
}

/// Fits `g(E[y_ij | u_i]) = x_ij' beta + u_i`, `u_i ~ N(0, sigma_u^2)`.
pub fn fit_random_intercept(
    groups: &[u64],
    x: &DMatrix<f64>,
    y: &[f64],
    family: Family,
    opts: &MixedOptions,
) -> Result<MixedFit> {
    let n = y.len();
    if x.nrows() != n || groups.len() != n {
        return Err(Error::Validation("mixed model inputs have mismatched lengths".into()));
    }
    let g = group(groups);
    if g.ids.len() < 2 {
        return Err(Error::Validation("mixed model needs at least two groups".into()));
    }
    let k = x.ncols() + 1;
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| std::iter::once(1.0).chain(x.row(i).iter().copied()).collect())
        .collect();
    match family {
        Family::Gaussian => fit_gaussian(&g, &rows, y, k, opts),
        _ => fit_laplace(&g, &rows, y, family, k, opts),
    }
}

fn golden_max<F: FnMut(f64) -> f64>(mut f: F, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut a = hi - r * (hi - lo);
    let mut b = lo + r * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    while hi - lo > tol {
        if fa >= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - r * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + r * (hi - lo);
            fb = f(b);
        }
    }
    if fa >= fb {
        (a, fa)
    } else {
        (b, fb)
    }
}

fn fit_gaussian(g: &Groups, rows: &[Vec<f64>], y: &[f64], k: usize, opts: &MixedOptions) -> Result<MixedFit> {
    let n = y.len() as f64;
    let mut xtx = DMatrix::<f64>::zeros(k, k);
    let mut xty = DVector::<f64>::zeros(k);
    let mut yty = 0.0;
    for (r, &yi) in rows.iter().zip(y) {
        for a in 0..k {
            xty[a] += r[a] * yi;
            for b in 0..k {
                xtx[(a, b)] += r[a] * r[b];
            }
        }
        yty += yi * yi;
    }
    for j in 1..k {
        xtx[(j, j)] += opts.ridge;
    }
    let sums: Vec<(f64, DVector<f64>, f64)> = g
        .members
        .iter()
        .map(|m| {
            let mut s = DVector::<f64>::zeros(k);
            let mut t = 0.0;
            for &i in m {
                for a in 0..k {
                    s[a] += rows[i][a];
                }
                t += y[i];
            }
            (m.len() as f64, s, t)
        })
        .collect();

    // returns (profile loglik, beta, sigma^2)
    let profile = |tau: f64| -> Option<(f64, DVector<f64>, f64)> {
        let mut a = xtx.clone();
        let mut b = xty.clone();
        let mut quad = yty;
        let mut logdet = 0.0;
        for (ni, s, t) in &sums {
            let c = tau / (1.0 + ni * tau);
            if c > 0.0 {
                a -= c * s * s.transpose();
                b -= c * *t * s;
                quad -= c * t * t;
            }
            logdet += (1.0 + ni * tau).ln();
        }
        let beta = a.cholesky()?.solve(&b);
        let q = (quad - b.dot(&beta)).max(1e-300);
        let sigma2 = q / n;
        Some((-0.5 * (n * sigma2.ln() + logdet), beta, sigma2))
    };

    let singletons = g.members.iter().all(|m| m.len() == 1);
    let at_zero = profile(0.0).ok_or_else(|| Error::Singular("fixed-effect design is singular".into()))?;
    let mut warning = None;
    let (tau, best) = if singletons {
        warning = Some("every group has one observation; sigma_u is not identifiable and set to 0".into());
        (0.0, at_zero)
    } else {
        let (log_tau, ll) = golden_max(|lt| profile(lt.exp()).map_or(f64::NEG_INFINITY, |p| p.0), -18.0, 9.0, 1e-6);
        if ll > at_zero.0 {
            let tau = log_tau.exp();
            (tau, profile(tau).expect("evaluated above"))
        } else {
            (0.0, at_zero)
        }
    };
    let (_, beta, sigma2) = best;
    let sigma_u = (tau * sigma2).sqrt();
    let mut blups: Vec<(u64, f64)> = g
        .ids
        .iter()
        .zip(&sums)
        .map(|(&id, (ni, s, t))| {
            let c = tau / (1.0 + ni * tau);
            (id, c * (t - s.dot(&beta)))
        })
        .collect();
    blups.sort_by_key(|(id, _)| *id);
    Ok(MixedFit {
        family: Family::Gaussian,
        fixed_effects: beta.iter().copied().collect(),
        sigma_u,
        residual_sd: Some(sigma2.sqrt()),
        blups,
        warning,
    })
}

/// Posterior mode of one intercept given offsets `eta` (fixed part) and responses.
fn intercept_mode(family: Family, eta: &[f64], y: &[f64], sigma: f64, start: f64) -> (f64, f64) {
    let prec = 1.0 / (sigma * sigma);
    let mut u = start;
    for _ in 0..100 {
        let (mut grad, mut hess) = (-u * prec, prec);
        for (&e, &yi) in eta.iter().zip(y) {
            let mu = family.inverse_link(e + u);
            grad += yi - mu;
            hess += family.weight(mu);
        }
        let step = (grad / hess).clamp(-5.0, 5.0);
        u += step;
        if step.abs() < 1e-12 {
            break;
        }
    }
    let hess = prec + eta.iter().map(|&e| family.weight(family.inverse_link(e + u))).sum::<f64>();
    (u, hess)
}

#[inline]
fn weight_derivative(family: Family, mu: f64) -> f64 {
    match family {
        Family::Binomial => mu * (1.0 - mu) * (1.0 - 2.0 * mu),
        Family::Poisson => mu,
        Family::Gaussian => 0.0,
    }
}

struct LaplaceState {
    loglik: f64,
    modes: Vec<f64>,
}

fn laplace_loglik(
    g: &Groups,
    rows: &[Vec<f64>],
    y: &[f64],
    family: Family,
    beta: &[f64],
    sigma: f64,
    ridge: f64,
    warm: &[f64],
) -> LaplaceState {
    let mut loglik = -0.5 * ridge * beta[1..].iter().map(|b| b * b).sum::<f64>();
    let mut modes = Vec::with_capacity(g.members.len());
    let mut eta = Vec::new();
    let mut yy = Vec::new();
    for (gi, m) in g.members.iter().enumerate() {
        eta.clear();
        yy.clear();
        for &i in m {
            eta.push(dot(beta, &rows[i]));
            yy.push(y[i]);
        }
        let (u, h) = intercept_mode(family, &eta, &yy, sigma, warm.get(gi).copied().unwrap_or(0.0));
        let hu: f64 = eta.iter().zip(&yy).map(|(&e, &yi)| family.log_likelihood(yi, e + u)).sum::<f64>()
            - 0.5 * u * u / (sigma * sigma);
        loglik += hu - 0.5 * (sigma * sigma * h).ln();
        modes.push(u);
    }
    LaplaceState { loglik, modes }
}

fn glm_loglik(rows: &[Vec<f64>], y: &[f64], family: Family, beta: &[f64], ridge: f64) -> f64 {
    rows.iter().zip(y).map(|(r, &yi)| family.log_likelihood(yi, dot(beta, r))).sum::<f64>()
        - 0.5 * ridge * beta[1..].iter().map(|b| b * b).sum::<f64>()
}

/// Maximizes the fixed effects for one `sigma` (`sigma == 0` is the plain GLM).
fn optimize_beta(
    g: &Groups,
    rows: &[Vec<f64>],
    y: &[f64],
    family: Family,
    sigma: f64,
    start: &[f64],
    opts: &MixedOptions,
) -> Result<(Vec<f64>, f64, Vec<f64>)> {
    let k = start.len();
    let mut beta = start.to_vec();
    let mut modes = vec![0.0; g.members.len()];
    let eval = |b: &[f64], warm: &[f64]| -> LaplaceState {
        if sigma == 0.0 {
            LaplaceState { loglik: glm_loglik(rows, y, family, b, opts.ridge), modes: vec![0.0; g.members.len()] }
        } else {
            laplace_loglik(g, rows, y, family, b, sigma, opts.ridge, warm)
        }
    };
    let mut state = eval(&beta, &modes);
    for _ in 0..opts.max_iter {
        modes.clone_from(&state.modes);
        let mut grad = DVector::<f64>::zeros(k);
        let mut info = DMatrix::<f64>::zeros(k, k);
        for (gi, m) in g.members.iter().enumerate() {
            let u = modes[gi];
            let mut s = DVector::<f64>::zeros(k);
            let (mut sum_w, mut sum_wp) = (0.0, 0.0);
            let mut dh = DVector::<f64>::zeros(k);
            for &i in m {
                let r = &rows[i];
                let mu = family.inverse_link(dot(&beta, r) + u);
                let w = family.weight(mu);
                let wp = weight_derivative(family, mu);
                for a in 0..k {
                    grad[a] += (y[i] - mu) * r[a];
                    s[a] += w * r[a];
                    dh[a] += wp * r[a];
                    for b in 0..=a {
                        info[(a, b)] += w * r[a] * r[b];
                    }
                }
                sum_w += w;
                sum_wp += wp;
            }
            if sigma > 0.0 {
                let h = sum_w + 1.0 / (sigma * sigma);
                // d log H / d beta including the shift of the mode
                for a in 0..k {
                    let du = -s[a] / h;
                    grad[a] -= 0.5 * (dh[a] + sum_wp * du) / h;
                }
                for a in 0..k {
                    for b in 0..=a {
                        info[(a, b)] -= s[a] * s[b] / h;
                    }
                }
            }
        }
        for a in 0..k {
            for b in 0..a {
                info[(b, a)] = info[(a, b)];
            }
        }
        for j in 1..k {
            info[(j, j)] += opts.ridge;
            grad[j] -= opts.ridge * beta[j];
        }
        let delta = info
            .cholesky()
            .ok_or_else(|| Error::Singular("mixed-model information is not positive definite".into()))?
            .solve(&grad);
        let mut step = 1.0;
        let mut cand;
        let mut cand_state;
        let mut tries = 0;
        loop {
            cand = beta.iter().zip(delta.iter()).map(|(b, d)| b + step * d).collect::<Vec<_>>();
            cand_state = eval(&cand, &modes);
            if cand_state.loglik >= state.loglik - 1e-10 * state.loglik.abs().max(1.0) || tries >= 30 {
                break;
            }
            step *= 0.5;
            tries += 1;
        }
        let change = beta.iter().zip(&cand).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        beta = cand;
        state = cand_state;
        if change < opts.tol {
            break;
        }
    }
    Ok((beta, state.loglik, state.modes))
}

fn fit_laplace(
    g: &Groups,
    rows: &[Vec<f64>],
    y: &[f64],
    family: Family,
    k: usize,
    opts: &MixedOptions,
) -> Result<MixedFit> {
    let n = y.len() as f64;
    let ybar = y.iter().sum::<f64>() / n;
    let mut start = vec![0.0; k];
    start[0] = match family {
        Family::Binomial => super::glm::logit(ybar.clamp(1e-4, 1.0 - 1e-4)),
        _ => ybar.max(1e-4).ln(),
    };
    let (glm_beta, glm_ll, _) = optimize_beta(g, rows, y, family, 0.0, &start, opts)?;

    let mut warm = glm_beta.clone();
    let mut search_err = None;
    let (log_sigma, ll) = golden_max(
        |ls| match optimize_beta(g, rows, y, family, ls.exp(), &warm, opts) {
            Ok((b, ll, _)) => {
                warm = b;
                ll
            }
            Err(e) => {
                search_err.get_or_insert(e);
                f64::NEG_INFINITY
            }
        },
        (1e-3f64).ln(),
        (10.0f64).ln(),
        1e-3,
    );
    let (sigma_u, beta, modes) = if ll > glm_ll {
        let sigma = log_sigma.exp();
        let (b, _, m) = optimize_beta(g, rows, y, family, sigma, &warm, opts)?;
        (sigma, b, m)
    } else {
        (0.0, glm_beta, vec![0.0; g.members.len()])
    };
    let mut blups: Vec<(u64, f64)> = g.ids.iter().copied().zip(modes).collect();
    blups.sort_by_key(|(id, _)| *id);
    Ok(MixedFit {
        family,
        fixed_effects: beta,
        sigma_u,
        residual_sd: None,
        blups,
        warning: search_err.map(|e| format!("variance search hit: {e}")),
    })
}

/// Posterior mode of a new group's intercept from its observations
/// (design rows without the intercept column).
pub fn blup_for_new(model: &MixedFit, x: &[Vec<f64>], y: &[f64]) -> f64 {
    if x.is_empty() || model.sigma_u <= 0.0 {
        return 0.0;
    }
    let eta: Vec<f64> = x.iter().map(|r| model.fixed_predictor(r)).collect();
    match model.family {
        Family::Gaussian => {
            let s2u = model.sigma_u * model.sigma_u;
            let s2e = model.residual_sd.unwrap_or(1.0).powi(2);
            let resid: f64 = eta.iter().zip(y).map(|(e, yi)| yi - e).sum();
            s2u * resid / (s2e + x.len() as f64 * s2u)
        }
        family => intercept_mode(family, &eta, y, model.sigma_u, 0.0).0,
    }
}
