use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::Cohort;
use crate::error::{Error, Result};
use crate::rng::{substream, tag_hash};
use crate::solvers::{logistic, logit};

/// Driver name selecting the episode's latent severity.
pub const LATENT_SEVERITY: &str = "latent_severity";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Mechanism {
    Mcar,
    Mar,
    Mnar,
    Informative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingnessSpec {
    pub mechanism: Mechanism,
    /// Predictors to mask.
    pub targets: Vec<String>,
    /// Baseline masking probability.
    pub rate: f64,
    /// Observed predictor for MAR, `latent_severity` for INFORMATIVE.
    #[serde(default)]
    pub driver: Option<String>,
    /// Log-odds slope per standardized driver unit.
    #[serde(default)]
    pub strength: f64,
}

impl MissingnessSpec {
    pub fn mcar(targets: &[&str], rate: f64) -> Self {
        Self {
            mechanism: Mechanism::Mcar,
            targets: targets.iter().map(|s| s.to_string()).collect(),
            rate,
            driver: None,
            strength: 0.0,
        }
    }

    pub fn with_driver(mut self, mechanism: Mechanism, driver: Option<&str>, strength: f64) -> Self {
        self.mechanism = mechanism;
        self.driver = driver.map(str::to_string);
        self.strength = strength;
        self
    }
}

enum Driver {
    None,
    Predictor(usize),
    Own,
    Severity,
}

/// Model-scale mean and SD of each predictor over all rows.
fn moments(cohort: &Cohort) -> Vec<(f64, f64)> {
    (0..cohort.schema.len())
        .map(|j| {
            let log = cohort.schema.get(j).log_transform;
            let vals: Vec<f64> = cohort
                .episodes
                .iter()
                .flat_map(|e| e.rows.iter().filter_map(move |r| r.values[j]))
                .map(|v| if log { v.ln() } else { v })
                .collect();
            let n = vals.len().max(1) as f64;
            let m = vals.iter().sum::<f64>() / n;
            let sd = (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
            (m, if sd > 0.0 { sd } else { 1.0 })
        })
        .collect()
}

/// Masks entries per spec. Drivers are read from the unmasked input, so specs
/// do not interact. Static predictors are masked once per episode.
pub fn impose_missingness(cohort: &Cohort, specs: &[MissingnessSpec], seed: u64) -> Result<Cohort> {
    let schema = &cohort.schema;
    let stats = moments(cohort);
    let mut out = cohort.clone();
    for (k, spec) in specs.iter().enumerate() {
        if !(0.0..=1.0).contains(&spec.rate) {
            return Err(Error::Config(format!("missingness rate {} outside [0, 1]", spec.rate)));
        }
        let driver = match (spec.mechanism, spec.driver.as_deref()) {
            (Mechanism::Mcar, _) => Driver::None,
            (Mechanism::Mnar, _) => Driver::Own,
            (Mechanism::Informative, Some(LATENT_SEVERITY) | None) => Driver::Severity,
            (Mechanism::Mar, Some(name)) => Driver::Predictor(
                schema.index_of(name).ok_or_else(|| Error::Config(format!("unknown missingness driver `{name}`")))?,
            ),
            (_, Some(name)) => return Err(Error::Config(format!("driver `{name}` invalid for {:?}", spec.mechanism))),
            (Mechanism::Mar, None) => return Err(Error::Config("MAR missingness needs a driver".into())),
        };
        let targets = spec
            .targets
            .iter()
            .map(|t| schema.index_of(t).ok_or_else(|| Error::Config(format!("unknown missingness target `{t}`"))))
            .collect::<Result<Vec<_>>>()?;
        let base = if spec.rate > 0.0 && spec.rate < 1.0 { logit(spec.rate) } else { 0.0 };
        let standardize = |j: usize, v: f64| {
            let v = if schema.get(j).log_transform { v.ln() } else { v };
            (v - stats[j].0) / stats[j].1
        };

        for (e, (orig, ep)) in cohort.episodes.iter().zip(out.episodes.iter_mut()).enumerate() {
            let mut rng = substream(seed, &[tag_hash("missingness"), k as u64, e as u64]);
            let severity = if cohort.random_intercept_sd > 0.0 { cohort.severity[e] / cohort.random_intercept_sd } else { 0.0 };
            for &j in &targets {
                let is_static = schema.get(j).baseline_only;
                let mut static_mask = None;
                for (r, row) in ep.rows.iter_mut().enumerate() {
                    let prob = match spec.rate {
                        p if p <= 0.0 => 0.0,
                        p if p >= 1.0 => 1.0,
                        _ => {
                            let src = &orig.rows[if is_static { 0 } else { r }];
                            let z = match driver {
                                Driver::None => 0.0,
                                Driver::Severity => severity,
                                Driver::Own => src.values[j].map_or(0.0, |v| standardize(j, v)),
                                Driver::Predictor(d) => src.values[d].map_or(0.0, |v| standardize(d, v)),
                            };
                            logistic(base + spec.strength * z)
                        }
                    };
                    let draw = rng.gen::<f64>() < prob;
                    let masked = if is_static { *static_mask.get_or_insert(draw) } else { draw };
                    if masked {
                        row.values[j] = None;
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::EventType;
    use crate::exec::Execution;
    use crate::synthgen::{desk_config, generate_cohort};

    fn cohort(n: usize) -> Cohort {
        let mut cfg = desk_config(3);
        cfg.n_episodes = n;
        generate_cohort(&cfg, Execution::Parallel).unwrap()
    }

    fn masked(c: &Cohort, j: usize) -> (usize, usize) {
        let mut m = 0;
        let mut total = 0;
        for e in &c.episodes {
            for r in &e.rows {
                total += 1;
                m += usize::from(r.values[j].is_none());
            }
        }
        (m, total)
    }

    #[test]
    fn extreme_rates_are_exact() {
        let c = cohort(300);
        let none = impose_missingness(&c, &[MissingnessSpec::mcar(&["urea"], 0.0)], 1).unwrap();
        assert_eq!(none, c);
        let all = impose_missingness(&c, &[MissingnessSpec::mcar(&["urea"], 1.0)], 1).unwrap();
        let j = c.schema.index_of("urea").unwrap();
        let (m, total) = masked(&all, j);
        assert_eq!(m, total);
    }

    #[test]
    fn mcar_rate_concentrates() {
        let c = cohort(6000);
        let j = c.schema.index_of("temperature").unwrap();
        let out = impose_missingness(&c, &[MissingnessSpec::mcar(&["temperature"], 0.3)], 2).unwrap();
        let (m, total) = masked(&out, j);
        assert!(total >= 100_000 / 2, "only {total} entries");
        let rate = m as f64 / total as f64;
        assert!((rate - 0.3).abs() < 0.01, "{rate}");
    }

    #[test]
    fn untargeted_predictors_untouched() {
        let c = cohort(500);
        let spec = MissingnessSpec::mcar(&["urea"], 0.5).with_driver(Mechanism::Mar, Some("temperature"), 1.0);
        let out = impose_missingness(&c, &[spec], 3).unwrap();
        for (a, b) in c.episodes.iter().zip(&out.episodes) {
            for (ra, rb) in a.rows.iter().zip(&b.rows) {
                for j in 0..c.schema.len() {
                    if c.schema.get(j).name != "urea" {
                        assert_eq!(ra.values[j], rb.values[j]);
                    }
                }
            }
        }
    }

    #[test]
    fn static_masks_are_per_episode() {
        let c = cohort(400);
        let j = c.schema.index_of("age").unwrap();
        let out = impose_missingness(&c, &[MissingnessSpec::mcar(&["age"], 0.5)], 4).unwrap();
        for e in &out.episodes {
            assert!(e.rows.iter().all(|r| r.values[j].is_none()) || e.rows.iter().all(|r| r.values[j].is_some()));
        }
    }

    #[test]
    fn bad_drivers_are_config_errors() {
        let c = cohort(50);
        let spec = MissingnessSpec::mcar(&["urea"], 0.5).with_driver(Mechanism::Mar, Some("nope"), 1.0);
        assert!(matches!(impose_missingness(&c, &[spec], 1), Err(Error::Config(_))));
        let spec = MissingnessSpec::mcar(&["nope"], 0.5);
        assert!(matches!(impose_missingness(&c, &[spec], 1), Err(Error::Config(_))));
    }

    #[test]
    fn informative_missingness_tracks_outcome_sign() {
        for strength in [2.0, -2.0] {
            let c = cohort(5000);
            let targets = ["urea", "temperature", "neutropenia"];
            let spec = MissingnessSpec::mcar(&targets, 0.4).with_driver(Mechanism::Informative, None, strength);
            let out = impose_missingness(&c, &[spec], 5).unwrap();
            let idx: Vec<usize> = targets.iter().map(|t| c.schema.index_of(t).unwrap()).collect();
            let (mut frac, mut y) = (Vec::new(), Vec::new());
            for e in &out.episodes {
                let cells = (e.rows.len() * idx.len()) as f64;
                let miss = e.rows.iter().flat_map(|r| idx.iter().map(move |&j| r.values[j].is_none())).filter(|&b| b).count();
                frac.push(miss as f64 / cells);
                y.push(f64::from(e.event_type == EventType::Clabsi && e.event_time <= 7.0));
            }
            let corr = crate::synthgen::generate::tests::pearson(&frac, &y);
            assert!(corr * strength.signum() > 0.05, "strength {strength}: corr {corr}");
        }
    }
}
