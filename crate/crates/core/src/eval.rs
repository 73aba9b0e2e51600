//! Binary-outcome performance metrics for risk predictions and pooling of
//! multiply-imputed predictions.
//!
//! Metrics that cannot be computed on a set (single-class labels, zero
//! predicted mass, separation) come back as `None`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solvers::{fit_glm, logistic, logit, Family, GlmOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    /// Predictions are clamped to `[clamp, 1 - clamp]` before taking logits.
    pub clamp: f64,
    pub eci_scale: f64,
    pub eci_min_n: usize,
    pub deciles: usize,
    /// Points on the smoothed calibration curve.
    pub smooth_points: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { clamp: 1e-6, eci_scale: 100.0, eci_min_n: 50, deciles: 10, smooth_points: 50 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolScale {
    #[default]
    Probability,
    Logit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredLabelSet {
    pub predictions: Vec<f64>,
    pub labels: Vec<bool>,
    pub s: u32,
    pub strategy: String,
    pub split: usize,
}

impl PredLabelSet {
    pub fn new(predictions: Vec<f64>, labels: Vec<bool>, s: u32, strategy: &str, split: usize) -> Result<Self> {
        if predictions.len() != labels.len() {
            return Err(Error::Validation(format!(
                "{} predictions but {} labels",
                predictions.len(),
                labels.len()
            )));
        }
        if let Some(p) = predictions.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Validation(format!("prediction {p} outside [0, 1]")));
        }
        Ok(Self { predictions, labels, s, strategy: strategy.to_string(), split })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_events(&self) -> usize {
        self.labels.iter().filter(|&&y| y).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecilePoint {
    pub bin: usize,
    pub n: usize,
    pub mean_predicted: f64,
    pub observed: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CalibrationCurve {
    pub deciles: Vec<DecilePoint>,
    /// `(p, ĉ(p))` pairs from the recalibration smoother.
    pub smoothed: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n: usize,
    pub n_events: usize,
    pub auroc: Option<f64>,
    pub brier: Option<f64>,
    pub scaled_brier: Option<f64>,
    pub calibration_slope: Option<f64>,
    pub oe_ratio: Option<f64>,
    pub eci: Option<f64>,
    pub curve: CalibrationCurve,
}

impl MetricReport {
    pub const METRICS: [&'static str; 6] = ["auroc", "brier", "scaled_brier", "calibration_slope", "oe_ratio", "eci"];

    /// `(name, value)` in [`Self::METRICS`] order.
    pub fn values(&self) -> [(&'static str, Option<f64>); 6] {
        [
            ("auroc", self.auroc),
            ("brier", self.brier),
            ("scaled_brier", self.scaled_brier),
            ("calibration_slope", self.calibration_slope),
            ("oe_ratio", self.oe_ratio),
            ("eci", self.eci),
        ]
    }
}

pub fn evaluate(set: &PredLabelSet, opts: &EvalOptions) -> MetricReport {
    let smoother = Smoother::fit(&set.predictions, &set.labels, opts);
    MetricReport {
        n: set.len(),
        n_events: set.n_events(),
        auroc: auroc(set),
        brier: brier(set),
        scaled_brier: scaled_brier(set),
        calibration_slope: calibration_slope(set, opts),
        oe_ratio: oe_ratio(set),
        eci: smoother.as_ref().and_then(|s| s.eci(&set.predictions, opts)),
        curve: CalibrationCurve {
            deciles: decile_points(set, opts.deciles),
            smoothed: smoother.map(|s| s.grid(&set.predictions, opts)).unwrap_or_default(),
        },
    }
}

/// Element-wise pooling of `m` prediction vectors.
pub fn rubin_pool(preds: &[Vec<f64>], scale: PoolScale) -> Result<Vec<f64>> {
    let first = preds.first().ok_or_else(|| Error::Validation("nothing to pool".into()))?;
    if preds.iter().any(|p| p.len() != first.len()) {
        return Err(Error::Validation("prediction vectors differ in length".into()));
    }
    if preds.len() == 1 {
        return Ok(first.clone());
    }
    let m = preds.len() as f64;
    Ok((0..first.len())
        .map(|i| match scale {
            PoolScale::Probability => preds.iter().map(|p| p[i]).sum::<f64>() / m,
            PoolScale::Logit => logistic(preds.iter().map(|p| logit(p[i].clamp(1e-12, 1.0 - 1e-12))).sum::<f64>() / m),
        })
        .collect())
}

/// Mann-Whitney AUROC with midranks for ties.
pub fn auroc(set: &PredLabelSet) -> Option<f64> {
    let n1 = set.n_events();
    let n0 = set.len() - n1;
    if n1 == 0 || n0 == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..set.len()).collect();
    idx.sort_by(|&a, &b| set.predictions[a].total_cmp(&set.predictions[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && set.predictions[idx[j + 1]] == set.predictions[idx[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += midrank * idx[i..=j].iter().filter(|&&k| set.labels[k]).count() as f64;
        i = j + 1;
    }
    let (n1, n0) = (n1 as f64, n0 as f64);
    Some((rank_sum - n1 * (n1 + 1.0) / 2.0) / (n1 * n0))
}

pub fn brier(set: &PredLabelSet) -> Option<f64> {
    if set.is_empty() {
        return None;
    }
    Some(set.predictions.iter().zip(&set.labels).map(|(p, &y)| (p - f64::from(u8::from(y))).powi(2)).sum::<f64>() / set.len() as f64)
}

pub fn scaled_brier(set: &PredLabelSet) -> Option<f64> {
    let ybar = set.n_events() as f64 / set.len() as f64;
    let null = ybar * (1.0 - ybar);
    if set.is_empty() || null == 0.0 {
        return None;
    }
    Some(1.0 - brier(set)? / null)
}

pub fn oe_ratio(set: &PredLabelSet) -> Option<f64> {
    let expected: f64 = set.predictions.iter().sum();
    (expected > 0.0).then(|| set.n_events() as f64 / expected)
}

pub fn calibration_slope(set: &PredLabelSet, opts: &EvalOptions) -> Option<f64> {
    let n1 = set.n_events();
    if n1 == 0 || n1 == set.len() {
        return None;
    }
    let lp = clamped_logits(&set.predictions, opts.clamp);
    let (lo, hi) = lp.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if hi - lo <= 1e-12 {
        return None;
    }
    let x = DMatrix::from_column_slice(lp.len(), 1, &lp);
    let y: Vec<f64> = set.labels.iter().map(|&b| f64::from(u8::from(b))).collect();
    let fit = fit_glm(&x, &y, Family::Binomial, &GlmOptions { ridge: 0.0, ..Default::default() }).ok()?;
    (fit.converged && !fit.separated && fit.coefficients[1].is_finite()).then_some(fit.coefficients[1])
}

pub fn eci(set: &PredLabelSet, opts: &EvalOptions) -> Option<f64> {
    Smoother::fit(&set.predictions, &set.labels, opts)?.eci(&set.predictions, opts)
}

pub fn calibration_curve(set: &PredLabelSet, opts: &EvalOptions) -> CalibrationCurve {
    CalibrationCurve {
        deciles: decile_points(set, opts.deciles),
        smoothed: Smoother::fit(&set.predictions, &set.labels, opts)
            .map(|s| s.grid(&set.predictions, opts))
            .unwrap_or_default(),
    }
}

fn clamped_logits(p: &[f64], clamp: f64) -> Vec<f64> {
    p.iter().map(|&v| logit(v.clamp(clamp, 1.0 - clamp))).collect()
}

/// Quantile bins by predicted risk; tied predictions share a bin.
fn decile_points(set: &PredLabelSet, bins: usize) -> Vec<DecilePoint> {
    let n = set.len();
    if n == 0 || bins == 0 {
        return Vec::new();
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| set.predictions[a].total_cmp(&set.predictions[b]));
    let mut acc = vec![(0usize, 0.0, 0.0); bins];
    let mut block_start = 0;
    for (pos, &i) in idx.iter().enumerate() {
        if pos > 0 && set.predictions[i] != set.predictions[idx[pos - 1]] {
            block_start = pos;
        }
        let b = (block_start * bins / n).min(bins - 1);
        acc[b].0 += 1;
        acc[b].1 += set.predictions[i];
        acc[b].2 += f64::from(u8::from(set.labels[i]));
    }
    acc.into_iter()
        .enumerate()
        .filter(|(_, a)| a.0 > 0)
        .map(|(bin, (k, sp, sy))| DecilePoint { bin, n: k, mean_predicted: sp / k as f64, observed: sy / k as f64 })
        .collect()
}

/// Local-linear Gaussian-kernel regression of the label on logit(p), with a
/// rule-of-thumb bandwidth. Evaluated on a grid and interpolated.
struct Smoother {
    grid_x: Vec<f64>,
    grid_c: Vec<f64>,
    clamp: f64,
}

const SMOOTHER_GRID: usize = 256;

impl Smoother {
    fn fit(p: &[f64], labels: &[bool], opts: &EvalOptions) -> Option<Self> {
        let n = p.len();
        if n < opts.eci_min_n.max(1) {
            return None;
        }
        let x = clamped_logits(p, opts.clamp);
        let y: Vec<f64> = labels.iter().map(|&b| f64::from(u8::from(b))).collect();
        let mean = x.iter().sum::<f64>() / n as f64;
        let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0).max(1.0)).sqrt();
        let mut sorted = x.clone();
        sorted.sort_by(f64::total_cmp);
        let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
        let spread = if iqr > 0.0 { sd.min(iqr / 1.349) } else { sd };
        let (lo, hi) = (sorted[0], sorted[n - 1]);
        if spread <= 1e-12 || hi - lo <= 1e-12 {
            let ybar = y.iter().sum::<f64>() / n as f64;
            return Some(Self { grid_x: vec![lo], grid_c: vec![ybar], clamp: opts.clamp });
        }
        let h = 0.9 * spread * (n as f64).powf(-0.2);
        let grid_x: Vec<f64> = (0..SMOOTHER_GRID).map(|k| lo + (hi - lo) * k as f64 / (SMOOTHER_GRID - 1) as f64).collect();
        let mut grid_c = Vec::with_capacity(SMOOTHER_GRID);
        for &g in &grid_x {
            let (mut s0, mut s1, mut s2, mut t0, mut t1) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (xi, yi) in x.iter().zip(&y) {
                let d = xi - g;
                let u = d / h;
                if u.abs() > 8.0 {
                    continue;
                }
                let w = (-0.5 * u * u).exp();
                s0 += w;
                s1 += w * d;
                s2 += w * d * d;
                t0 += w * yi;
                t1 += w * d * yi;
            }
            if s0 <= 1e-300 {
                return None;
            }
            let det = s0 * s2 - s1 * s1;
            let c = if det > 1e-10 * s0 * s2 { (s2 * t0 - s1 * t1) / det } else { t0 / s0 };
            if !c.is_finite() {
                return None;
            }
            grid_c.push(c.clamp(0.0, 1.0));
        }
        Some(Self { grid_x, grid_c, clamp: opts.clamp })
    }

    fn at(&self, p: f64) -> f64 {
        let x = logit(p.clamp(self.clamp, 1.0 - self.clamp));
        let g = &self.grid_x;
        if g.len() == 1 || x <= g[0] {
            return self.grid_c[0];
        }
        let last = g.len() - 1;
        if x >= g[last] {
            return self.grid_c[last];
        }
        let k = g.partition_point(|&v| v <= x) - 1;
        let t = (x - g[k]) / (g[k + 1] - g[k]);
        self.grid_c[k] + t * (self.grid_c[k + 1] - self.grid_c[k])
    }

    fn eci(&self, p: &[f64], opts: &EvalOptions) -> Option<f64> {
        let v = opts.eci_scale * p.iter().map(|&pi| (pi - self.at(pi)).powi(2)).sum::<f64>() / p.len() as f64;
        v.is_finite().then_some(v)
    }

    fn grid(&self, p: &[f64], opts: &EvalOptions) -> Vec<(f64, f64)> {
        let (lo, hi) = p.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let k = opts.smooth_points.max(1);
        if k == 1 || hi <= lo {
            return vec![(lo, self.at(lo))];
        }
        (0..k).map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64).map(|q| (q, self.at(q))).collect()
    }
}

/// Linear-interpolation quantile of sorted data.
pub(crate) fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let (i, t) = (pos.floor() as usize, pos.fract());
    if i + 1 >= sorted.len() {
        sorted[sorted.len() - 1]
    } else {
        sorted[i] + t * (sorted[i + 1] - sorted[i])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn set(p: Vec<f64>, y: Vec<bool>) -> PredLabelSet {
        PredLabelSet::new(p, y, 0, "t", 0).unwrap()
    }

    fn calibrated(n: usize, seed: u64) -> PredLabelSet {
        let mut rng = substream(seed, &[]);
        let p: Vec<f64> = (0..n).map(|_| logistic(rng.gen_range(-4.0..1.0))).collect();
        let y = p.iter().map(|&pi| rng.gen::<f64>() < pi).collect();
        set(p, y)
    }

    fn brute_auroc(s: &PredLabelSet) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..s.len() {
            for j in 0..s.len() {
                if s.labels[i] && !s.labels[j] {
                    den += 1.0;
                    num += match s.predictions[i].partial_cmp(&s.predictions[j]).unwrap() {
                        std::cmp::Ordering::Greater => 1.0,
                        std::cmp::Ordering::Equal => 0.5,
                        std::cmp::Ordering::Less => 0.0,
                    };
                }
            }
        }
        num / den
    }

    #[test]
    fn validation() {
        assert!(PredLabelSet::new(vec![0.1], vec![], 0, "t", 0).is_err());
        assert!(PredLabelSet::new(vec![1.5], vec![true], 0, "t", 0).is_err());
    }

    #[test]
    fn pooling() {
        assert_eq!(rubin_pool(&[vec![0.2, 0.7]], PoolScale::Probability).unwrap(), vec![0.2, 0.7]);
        assert_abs_diff_eq!(rubin_pool(&[vec![0.2], vec![0.4]], PoolScale::Probability).unwrap()[0], 0.3, epsilon = 1e-15);
        let same = vec![0.1, 0.9, 0.33];
        let pooled = rubin_pool(&[same.clone(), same.clone(), same.clone()], PoolScale::Logit).unwrap();
        for (a, b) in pooled.iter().zip(&same) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        assert!(rubin_pool(&[vec![0.1], vec![0.1, 0.2]], PoolScale::Probability).is_err());
        assert!(rubin_pool(&[], PoolScale::Probability).is_err());
    }

    #[test]
    fn auroc_examples() {
        let s = set(vec![0.1, 0.2, 0.8, 0.9], vec![false, false, true, true]);
        assert_eq!(auroc(&s), Some(1.0));
        let s = set(vec![0.3; 6], vec![true, false, true, false, false, false]);
        assert_eq!(auroc(&s), Some(0.5));
        assert_eq!(auroc(&set(vec![0.1, 0.2], vec![true, true])), None);
    }

    #[test]
    fn scaled_brier_examples() {
        let y = vec![true, false, false, true, false];
        let p: Vec<f64> = y.iter().map(|&b| f64::from(u8::from(b))).collect();
        assert_eq!(scaled_brier(&set(p.clone(), y.clone())), Some(1.0));
        assert_abs_diff_eq!(scaled_brier(&set(vec![0.4; 5], y.clone())).unwrap(), 0.0, epsilon = 1e-12);
        let flipped: Vec<f64> = p.iter().map(|v| 1.0 - v).collect();
        let ybar = 0.4;
        let oracle = 1.0 - 1.0 / (ybar * (1.0 - ybar));
        assert_abs_diff_eq!(scaled_brier(&set(flipped, y)).unwrap(), oracle, epsilon = 1e-12);
        assert_eq!(scaled_brier(&set(vec![0.2, 0.3], vec![false, false])), None);
    }

    #[test]
    fn oe_examples() {
        let s = set(vec![0.5, 0.5], vec![true, false]);
        assert_eq!(oe_ratio(&s), Some(1.0));
        assert_eq!(oe_ratio(&set(vec![0.25, 0.25], vec![true, false])), Some(2.0));
        assert_eq!(oe_ratio(&set(vec![0.2, 0.1], vec![false, false])), Some(0.0));
        assert_eq!(oe_ratio(&set(vec![0.0, 0.0], vec![true, false])), None);
    }

    #[test]
    fn calibration_slope_self_and_doubled() {
        let s = calibrated(10_000, 1);
        let opts = EvalOptions::default();
        let slope = calibration_slope(&s, &opts).unwrap();
        assert!((slope - 1.0).abs() < 0.1, "{slope}");
        let doubled = set(s.predictions.iter().map(|&p| logistic(2.0 * logit(p))).collect(), s.labels.clone());
        let half = calibration_slope(&doubled, &opts).unwrap();
        assert!((half - 0.5).abs() < 0.05, "{half}");
        assert_eq!(calibration_slope(&set(vec![0.3; 4], vec![true, false, false, true]), &opts), None);
        assert_eq!(calibration_slope(&set(vec![0.1, 0.2, 0.8, 0.9], vec![false, false, true, true]), &opts), None);
    }

    #[test]
    fn eci_examples() {
        let opts = EvalOptions::default();
        let e = eci(&calibrated(10_000, 2), &opts).unwrap();
        assert!(e <= 0.5, "{e}");
        let half: Vec<bool> = (0..100).map(|i| i % 2 == 0).collect();
        assert_abs_diff_eq!(eci(&set(vec![0.5; 100], half), &opts).unwrap(), 0.0, epsilon = 1e-12);
        let tenth: Vec<bool> = (0..100).map(|i| i % 10 == 0).collect();
        assert_abs_diff_eq!(eci(&set(vec![0.9; 100], tenth), &opts).unwrap(), 64.0, epsilon = 1e-9);
        assert_eq!(eci(&set(vec![0.5; 10], vec![true; 10]), &opts), None);
    }

    #[test]
    fn curve_examples() {
        let opts = EvalOptions::default();
        let c = calibration_curve(&calibrated(100_000, 3), &opts);
        assert_eq!(c.deciles.len(), 10);
        for d in &c.deciles {
            assert!((d.observed - d.mean_predicted).abs() < 0.03, "{d:?}");
        }
        assert_eq!(c.smoothed.len(), 50);
        let zeros = calibration_curve(&set((0..100).map(|i| i as f64 / 200.0).collect(), vec![false; 100]), &opts);
        assert!(zeros.deciles.iter().all(|d| d.observed == 0.0));
        let flat = calibration_curve(&set(vec![0.2; 60], (0..60).map(|i| i < 12).collect()), &opts);
        assert_eq!(flat.deciles.len(), 1);
        assert_abs_diff_eq!(flat.deciles[0].observed, 0.2, epsilon = 1e-12);
    }

    #[test]
    fn pooled_oe_is_linear() {
        let a = calibrated(500, 4);
        let b: Vec<f64> = a.predictions.iter().map(|p| p * 0.8).collect();
        let pooled = rubin_pool(&[a.predictions.clone(), b.clone()], PoolScale::Probability).unwrap();
        let oe = oe_ratio(&set(pooled, a.labels.clone())).unwrap();
        let mean_sum = (a.predictions.iter().sum::<f64>() + b.iter().sum::<f64>()) / 2.0;
        assert_abs_diff_eq!(oe, a.n_events() as f64 / mean_sum, epsilon = 1e-12);
    }

    fn arb_set() -> impl Strategy<Value = PredLabelSet> {
        (2usize..60).prop_flat_map(|n| {
            (proptest::collection::vec(0u8..=20, n), proptest::collection::vec(any::<bool>(), n))
                .prop_map(|(p, y)| set(p.into_iter().map(|v| f64::from(v) / 20.0).collect(), y))
        })
    }

    proptest! {
        #[test]
        fn auroc_matches_pair_count(s in arb_set()) {
            match auroc(&s) {
                Some(a) => prop_assert!((a - brute_auroc(&s)).abs() < 1e-12),
                None => prop_assert!(s.n_events() == 0 || s.n_events() == s.len()),
            }
        }

        #[test]
        fn auroc_monotone_invariant_and_symmetric(s in arb_set()) {
            let t = set(s.predictions.iter().map(|p| p.powi(3) * 0.5).collect(), s.labels.clone());
            prop_assert_eq!(auroc(&s), auroc(&t));
            let inv = set(s.predictions.clone(), s.labels.iter().map(|y| !y).collect());
            if let (Some(a), Some(b)) = (auroc(&s), auroc(&inv)) {
                prop_assert!((a + b - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn metrics_permutation_invariant(s in arb_set(), seed in any::<u64>()) {
            let mut idx: Vec<usize> = (0..s.len()).collect();
            let mut rng = substream(seed, &[]);
            rand::seq::SliceRandom::shuffle(idx.as_mut_slice(), &mut rng);
            let t = set(idx.iter().map(|&i| s.predictions[i]).collect(), idx.iter().map(|&i| s.labels[i]).collect());
            let close = |a: Option<f64>, b: Option<f64>| match (a, b) {
                (Some(x), Some(y)) => (x - y).abs() < 1e-9,
                (None, None) => true,
                _ => false,
            };
            prop_assert!(close(auroc(&s), auroc(&t)));
            prop_assert!(close(scaled_brier(&s), scaled_brier(&t)));
            prop_assert!(close(oe_ratio(&s), oe_ratio(&t)));
            prop_assert_eq!(decile_points(&s, 10), decile_points(&t, 10));
        }

        #[test]
        fn scaled_brier_at_most_one(s in arb_set()) {
            if let Some(b) = scaled_brier(&s) {
                prop_assert!(b <= 1.0 + 1e-12);
                let exact = s.predictions.iter().zip(&s.labels).all(|(p, &y)| *p == f64::from(u8::from(y)));
                prop_assert_eq!((b - 1.0).abs() < 1e-12, exact);
            }
        }
    }
}
