//! Episodes, landmark rows, predictor schemas and the stacked landmark dataset.

mod episode;
pub mod io;
mod rules;
mod schema;
mod stack;

pub use episode::{
    merge_catheters_into_episodes, CatheterInterval, Episode, EpisodeShell, EventType, LandmarkRow,
    MERGE_GAP_HOURS,
};
pub use rules::{
    apply_lumen_rules, apply_lumen_rules_dataset, apply_lumen_rules_to, exp_transform_values,
    inverse_transform_labs, log_transform_values, transform_labs,
};
pub use schema::{Predictor, PredictorKind, PredictorSchema};
pub use stack::{
    stack_landmarks, StackedDataset, StackedRow, DEFAULT_FIRST_LANDMARK, DEFAULT_HORIZON,
    DEFAULT_LAST_LANDMARK,
};
