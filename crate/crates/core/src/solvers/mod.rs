//! Numerical building blocks shared by the imputers and the landmark model.

pub mod cox;
pub mod forest;
pub mod glm;
pub mod mixed;
pub mod pmm;

pub use cox::{breslow_increments, fit_cox_breslow, partial_log_likelihood, CoxData, CoxFit, CoxOptions};
pub use forest::{fit_forest, ForestFit, ForestKind, ForestOptions};
pub use glm::{fit_glm, logistic, logit, Family, GlmFit, GlmOptions};
pub use mixed::{blup_for_new, fit_random_intercept, MixedFit, MixedOptions};
pub use pmm::{pmm_draw, DonorPool};
