use super::{Mechanism, MissingnessSpec, GeneratorConfig, PredictorDynamics};
use crate::datamodel::{Predictor, PredictorKind, PredictorSchema};

pub const DESK_EPISODES: usize = 3000;
pub const DESK_PREVALENCE: f64 = 0.031;

/// Six-predictor desk cohort. The CLABSI baseline is uncalibrated; use
/// `calibrate_clabsi_baseline` for the 3.1% prevalence.
pub fn desk_config(seed: u64) -> GeneratorConfig {
    use PredictorKind::*;
    let schema = PredictorSchema::new(vec![
        Predictor::new("age", Continuous).baseline(),
        Predictor::new("icu", Binary),
        Predictor::new("tpn", Binary),
        Predictor::new("urea", Continuous).log(),
        Predictor::new("temperature", Continuous),
        Predictor::new("neutropenia", Binary),
    ])
    .expect("static schema");
    let dynamics = vec![
        PredictorDynamics::new("age", 60.0, 2.0, 0.0, 15.0),
        PredictorDynamics::new("icu", -1.0, 0.6, 0.9, 1.5),
        PredictorDynamics::new("tpn", -1.8, 0.3, 0.9, 1.5),
        PredictorDynamics::new("urea", 1.9, 0.15, 0.8, 0.45),
        PredictorDynamics::new("temperature", 37.0, 0.15, 0.5, 0.6),
        PredictorDynamics::new("neutropenia", -2.2, 0.4, 0.95, 1.0),
    ];
    GeneratorConfig {
        n_episodes: DESK_EPISODES,
        schema,
        dynamics,
        cause_coefficients: [
            vec![0.0, 0.4, 0.7, 0.3, 0.5, 0.8],
            vec![0.03, 0.9, 0.2, 0.6, 0.2, 0.5],
            vec![-0.01, -0.8, -0.5, -0.3, -0.2, -0.4],
        ],
        baseline_rates: [0.003, 0.006, 0.08],
        random_intercept_sd: 1.0,
        severity_effect: 0.9,
        readmission_prob: 0.1,
        max_days: 60,
        last_landmark: crate::datamodel::DEFAULT_LAST_LANDMARK,
        seed,
    }
}

/// Missingness on the desk labs and vitals driven by latent severity: sicker
/// episodes are measured more often.
pub fn desk_informative_missingness() -> Vec<MissingnessSpec> {
    vec![
        MissingnessSpec::mcar(&["urea"], 0.5).with_driver(Mechanism::Informative, None, -1.5),
        MissingnessSpec::mcar(&["temperature"], 0.25).with_driver(Mechanism::Informative, None, -1.5),
        MissingnessSpec::mcar(&["neutropenia"], 0.3).with_driver(Mechanism::Informative, None, -1.0),
        MissingnessSpec::mcar(&["age"], 0.05),
    ]
}
