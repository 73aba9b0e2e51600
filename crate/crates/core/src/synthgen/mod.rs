//! Synthetic longitudinal cohorts with competing risks and controllable
//! missingness.
//!
//! Each episode carries a latent severity `u ~ N(0, sigma_u)`. Predictors load
//! on it as a random intercept, and it enters the CLABSI hazard directly.
//! Hazards are piecewise constant per day.

mod generate;
mod missingness;
mod preset;

pub use generate::{calibrate_clabsi_baseline, generate_cohort, Cohort, GeneratorConfig, PredictorDynamics};
pub use missingness::{impose_missingness, Mechanism, MissingnessSpec, LATENT_SEVERITY};
pub use preset::{desk_config, desk_informative_missingness, DESK_EPISODES, DESK_PREVALENCE};
