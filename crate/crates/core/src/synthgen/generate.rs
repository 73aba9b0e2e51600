use rand::Rng as _;
use rand_distr::{Distribution, Exp1, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::datamodel::{apply_lumen_rules_to, Episode, EventType, LandmarkRow, PredictorKind, PredictorSchema};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::rng::{substream, tag_hash};
use crate::solvers::logistic;

/// Per-predictor generating process on the model scale (log scale for
/// log-transformed labs, logit for binaries, log for counts).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorDynamics {
    pub name: String,
    pub mean: f64,
    /// Weight on the latent severity.
    #[serde(default)]
    pub loading: f64,
    /// AR(1) coefficient across landmarks.
    #[serde(default)]
    pub rho: f64,
    #[serde(default)]
    pub noise_sd: f64,
    /// Upper clamp for counts and ordinals.
    #[serde(default)]
    pub max_value: Option<f64>,
}

impl PredictorDynamics {
    pub fn new(name: &str, mean: f64, loading: f64, rho: f64, noise_sd: f64) -> Self {
        Self { name: name.into(), mean, loading, rho, noise_sd, max_value: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n_episodes: usize,
    pub schema: PredictorSchema,
    /// One entry per schema predictor, matched by name.
    pub dynamics: Vec<PredictorDynamics>,
    /// True log-hazard slopes per cause (CLABSI, death, discharge), one per
    /// predictor. Continuous predictors enter centered at their dynamics mean.
    pub cause_coefficients: [Vec<f64>; 3],
    /// Baseline hazard per day for each cause.
    pub baseline_rates: [f64; 3],
    pub random_intercept_sd: f64,
    /// Log-hazard ratio of CLABSI per unit latent severity.
    #[serde(default)]
    pub severity_effect: f64,
    /// Probability that an episode shares the previous episode's admission.
    #[serde(default)]
    pub readmission_prob: f64,
    /// Follow-up length; episodes still at risk are censored here.
    #[serde(default = "default_max_days")]
    pub max_days: u32,
    /// Last landmark that gets a row.
    #[serde(default = "default_last_landmark")]
    pub last_landmark: u32,
    pub seed: u64,
}

fn default_max_days() -> u32 {
    60
}

fn default_last_landmark() -> u32 {
    crate::datamodel::DEFAULT_LAST_LANDMARK
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let p = self.schema.len();
        if self.dynamics.len() != p
            || self.dynamics.iter().zip(self.schema.predictors()).any(|(d, q)| d.name != q.name)
        {
            return Err(Error::Config("dynamics must list every schema predictor in schema order".into()));
        }
        for (j, c) in self.cause_coefficients.iter().enumerate() {
            if c.len() != p {
                return Err(Error::Config(format!("cause {} has {} coefficients, expected {p}", j + 1, c.len())));
            }
        }
        if self.baseline_rates.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
            return Err(Error::Config("baseline rates must be positive".into()));
        }
        if !(self.random_intercept_sd >= 0.0) || self.dynamics.iter().any(|d| !(d.noise_sd >= 0.0)) {
            return Err(Error::Config("standard deviations must be nonnegative".into()));
        }
        if self.dynamics.iter().any(|d| !(0.0..1.0).contains(&d.rho)) {
            return Err(Error::Config("AR(1) coefficients must lie in [0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.readmission_prob) || self.max_days == 0 {
            return Err(Error::Config("invalid readmission probability or follow-up length".into()));
        }
        Ok(())
    }
}

/// Fully observed episodes plus the latent severity that generated them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    pub schema: PredictorSchema,
    pub episodes: Vec<Episode>,
    pub severity: Vec<f64>,
    pub random_intercept_sd: f64,
}

struct Simulated {
    event_time: f64,
    event_type: EventType,
    rows: Vec<LandmarkRow>,
    severity: f64,
}

fn simulate_episode(cfg: &GeneratorConfig, index: usize) -> Simulated {
    let mut rng = substream(cfg.seed, &[tag_hash("episode"), index as u64]);
    let schema = &cfg.schema;
    let p = schema.len();
    let u = cfg.random_intercept_sd * rng.sample::<f64, _>(StandardNormal);

    let mut noise = vec![0.0; p];
    let mut latent = vec![0.0; p];
    let mut values: Vec<f64> = vec![0.0; p];
    let mut rows = Vec::new();
    let mut elapsed = None;
    let mut cause = EventType::Censored;

    for day in 0..cfg.max_days {
        if day <= cfg.last_landmark {
            for (j, (pred, dyn_)) in schema.predictors().iter().zip(&cfg.dynamics).enumerate() {
                let eps: f64 = rng.sample(StandardNormal);
                if day == 0 {
                    noise[j] = dyn_.noise_sd * eps;
                } else if pred.baseline_only {
                    continue;
                } else {
                    noise[j] = dyn_.rho * noise[j] + (1.0 - dyn_.rho * dyn_.rho).sqrt() * dyn_.noise_sd * eps;
                }
                latent[j] = dyn_.mean + dyn_.loading * u + noise[j];
                values[j] = match pred.kind {
                    PredictorKind::Continuous => latent[j],
                    PredictorKind::Binary => f64::from(rng.gen::<f64>() < logistic(latent[j])),
                    PredictorKind::Count | PredictorKind::Ordinal => {
                        let lambda = latent[j].exp().min(1e6);
                        let draw = if lambda > 0.0 { Poisson::new(lambda).map_or(0.0, |d| d.sample(&mut rng)) } else { 0.0 };
                        dyn_.max_value.map_or(draw, |m| draw.min(m))
                    }
                };
            }
            let mut obs: Vec<Option<f64>> = values.iter().copied().map(Some).collect();
            apply_lumen_rules_to(&mut obs, schema);
            for (j, pred) in schema.predictors().iter().enumerate() {
                if let Some(link) = &pred.linked_catheter_type {
                    let t = schema.index_of(link).expect("validated link");
                    if obs[t] == Some(1.0) && obs[j] == Some(0.0) {
                        obs[j] = Some(1.0);
                    }
                }
                values[j] = obs[j].expect("generated");
            }
            rows.push((day, obs));
        }

        // hazards use model-scale values; continuous ones centered
        let mut total = 0.0;
        let mut rates = [0.0; 3];
        for (c, rate) in rates.iter_mut().enumerate() {
            let mut lp = 0.0;
            for (j, pred) in schema.predictors().iter().enumerate() {
                let z = if pred.kind == PredictorKind::Continuous { values[j] - cfg.dynamics[j].mean } else { values[j] };
                lp += cfg.cause_coefficients[c][j] * z;
            }
            if c == 0 {
                lp += cfg.severity_effect * u;
            }
            *rate = cfg.baseline_rates[c] * lp.exp();
            total += *rate;
        }
        let wait: f64 = rng.sample::<f64, _>(Exp1) / total;
        if wait < 1.0 {
            elapsed = Some(day as f64 + wait.max(1e-9));
            let mut pick = rng.gen::<f64>() * total;
            cause = EventType::Discharge;
            for (c, rate) in rates.iter().enumerate() {
                if pick < *rate {
                    cause = EventType::CAUSES[c];
                    break;
                }
                pick -= rate;
            }
            break;
        }
    }
    let event_time = elapsed.unwrap_or(cfg.max_days as f64);

    let mut out = Vec::new();
    for (day, mut obs) in rows {
        if (day as f64) >= event_time {
            break;
        }
        for (j, pred) in schema.predictors().iter().enumerate() {
            if pred.log_transform {
                obs[j] = obs[j].map(f64::exp);
            }
        }
        out.push(LandmarkRow::new(day, obs));
    }
    Simulated { event_time, event_type: cause, rows: out, severity: u }
}

/// Draws a fully observed cohort. Episode `i` uses its own substream, so the
/// output does not depend on the execution mode.
pub fn generate_cohort(cfg: &GeneratorConfig, exec: Execution) -> Result<Cohort> {
    cfg.validate()?;
    let sims = exec.map_range(cfg.n_episodes, |i| simulate_episode(cfg, i));
    let mut admit_rng = substream(cfg.seed, &[tag_hash("admission")]);
    let mut admission = 0u64;
    let mut episodes = Vec::with_capacity(sims.len());
    let mut severity = Vec::with_capacity(sims.len());
    for (i, sim) in sims.into_iter().enumerate() {
        if i == 0 || admit_rng.gen::<f64>() >= cfg.readmission_prob {
            admission += 1;
        }
        episodes.push(Episode::new(i as u64 + 1, admission, sim.event_time, sim.event_type, sim.rows, &cfg.schema)?);
        severity.push(sim.severity);
    }
    Ok(Cohort { schema: cfg.schema.clone(), episodes, severity, random_intercept_sd: cfg.random_intercept_sd })
}

/// Rescales the CLABSI baseline rate so the fraction of episodes ending in
/// CLABSI matches `target`, by bisection on the log rate with common random
/// numbers.
pub fn calibrate_clabsi_baseline(cfg: &GeneratorConfig, target: f64, exec: Execution) -> Result<f64> {
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::Config(format!("target prevalence {target} outside (0, 1)")));
    }
    cfg.validate()?;
    let prevalence = |rate: f64| {
        let mut c = cfg.clone();
        c.baseline_rates[0] = rate;
        let sims = exec.map_range(c.n_episodes, |i| simulate_episode(&c, i).event_type == EventType::Clabsi);
        sims.iter().filter(|&&b| b).count() as f64 / sims.len().max(1) as f64
    };
    let (mut lo, mut hi) = ((1e-7f64).ln(), (10.0f64).ln());
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if prevalence(mid.exp()) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::datamodel::Predictor;

    fn flat(n: usize, rates: [f64; 3], rho: f64, sigma_u: f64) -> GeneratorConfig {
        let schema = PredictorSchema::new(vec![Predictor::new("x", PredictorKind::Continuous)]).unwrap();
        GeneratorConfig {
            n_episodes: n,
            schema,
            dynamics: vec![PredictorDynamics::new("x", 0.0, 1.0, rho, 1.0)],
            cause_coefficients: [vec![0.0], vec![0.0], vec![0.0]],
            baseline_rates: rates,
            random_intercept_sd: sigma_u,
            severity_effect: 0.0,
            readmission_prob: 0.0,
            max_days: 400,
            last_landmark: 30,
            seed: 17,
        }
    }

    #[test]
    fn cause_shares_follow_rate_ratios() {
        let rates = [0.02, 0.05, 0.13];
        let cohort = generate_cohort(&flat(10_000, rates, 0.0, 0.0), Execution::Parallel).unwrap();
        let total: f64 = rates.iter().sum();
        for (c, cause) in EventType::CAUSES.iter().enumerate() {
            let share = cohort.episodes.iter().filter(|e| e.event_type == *cause).count() as f64 / 10_000.0;
            assert!((share - rates[c] / total).abs() < 0.02, "{cause:?} {share}");
        }
    }

    #[test]
    fn independent_noise_has_no_autocorrelation() {
        let cohort = generate_cohort(&flat(5000, [0.01, 0.01, 0.02], 0.0, 0.0), Execution::Parallel).unwrap();
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for e in &cohort.episodes {
            if e.rows.len() >= 2 {
                a.push(e.rows[0].values[0].unwrap());
                b.push(e.rows[1].values[0].unwrap());
            }
        }
        let corr = pearson(&a, &b);
        assert!(corr.abs() < 0.05, "{corr}");
    }

    #[test]
    fn ar1_gives_expected_lag_one_correlation() {
        let cohort = generate_cohort(&flat(3000, [0.01, 0.01, 0.02], 0.7, 0.0), Execution::Parallel).unwrap();
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for e in &cohort.episodes {
            for w in e.rows.windows(2) {
                a.push(w[0].values[0].unwrap());
                b.push(w[1].values[0].unwrap());
            }
        }
        assert!((pearson(&a, &b) - 0.7).abs() < 0.03);
    }

    #[test]
    fn same_seed_same_cohort_in_either_mode() {
        let cfg = flat(300, [0.05, 0.05, 0.1], 0.5, 1.0);
        let a = generate_cohort(&cfg, Execution::Sequential).unwrap();
        let b = generate_cohort(&cfg, Execution::Parallel).unwrap();
        assert_eq!(a, b);
        assert!(generate_cohort(&GeneratorConfig { n_episodes: 0, ..cfg }, Execution::Parallel).unwrap().episodes.is_empty());
    }

    #[test]
    fn rows_cover_days_before_the_event() {
        let cohort = generate_cohort(&flat(500, [0.05, 0.05, 0.1], 0.5, 1.0), Execution::Parallel).unwrap();
        for e in &cohort.episodes {
            let expected = (e.event_time.ceil() as u32).min(31);
            assert_eq!(e.rows.len() as u32, expected, "event {}", e.event_time);
        }
    }

    #[test]
    fn calibration_hits_target() {
        let mut cfg = flat(4000, [0.01, 0.02, 0.1], 0.0, 0.0);
        cfg.baseline_rates[0] = calibrate_clabsi_baseline(&cfg, 0.05, Execution::Parallel).unwrap();
        let cohort = generate_cohort(&cfg, Execution::Parallel).unwrap();
        let prev = cohort.episodes.iter().filter(|e| e.event_type == EventType::Clabsi).count() as f64 / 4000.0;
        assert!((prev - 0.05).abs() < 0.005, "{prev}");
    }

    pub(crate) fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }
}
