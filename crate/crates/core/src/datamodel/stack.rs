use serde::{Deserialize, Serialize};

use super::episode::{Episode, EventType};
use super::schema::PredictorSchema;
use crate::error::{Error, Result};

pub const DEFAULT_FIRST_LANDMARK: u32 = 0;
pub const DEFAULT_LAST_LANDMARK: u32 = 30;
pub const DEFAULT_HORIZON: f64 = 7.0;

/// One row of the stacked super-dataset: an episode still at risk at landmark `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackedRow {
    pub episode_id: u64,
    pub admission_id: u64,
    pub s: u32,
    pub values: Vec<Option<f64>>,
    /// Follow-up end, administratively censored at `s + w`.
    pub event_time: f64,
    pub event_type: EventType,
}

impl StackedRow {
    /// Binary outcome used for evaluation: the cause occurred within the horizon.
    pub fn had_event(&self, cause: EventType) -> bool {
        self.event_type == cause
    }

    pub fn is_complete(&self) -> bool {
        self.values.iter().all(Option::is_some)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackedDataset {
    pub schema: PredictorSchema,
    /// Ordered by episode (input order), then landmark.
    pub rows: Vec<StackedRow>,
    pub horizon: f64,
    pub first_landmark: u32,
    pub last_landmark: u32,
}

impl StackedDataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Same settings, different rows (subsets, single-row views).
    pub fn with_rows(&self, rows: Vec<StackedRow>) -> Self {
        Self {
            schema: self.schema.clone(),
            rows,
            horizon: self.horizon,
            first_landmark: self.first_landmark,
            last_landmark: self.last_landmark,
        }
    }

    /// Fraction of missing entries per predictor.
    pub fn missing_fraction(&self) -> Vec<f64> {
        let n = self.rows.len().max(1) as f64;
        (0..self.schema.len())
            .map(|j| self.rows.iter().filter(|r| r.values[j].is_none()).count() as f64 / n)
            .collect()
    }

    /// Contiguous row ranges belonging to the same episode.
    pub fn episode_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=self.rows.len() {
            if i == self.rows.len() || self.rows[i].episode_id != self.rows[start].episode_id {
                if i > start {
                    out.push(start..i);
                }
                start = i;
            }
        }
        out
    }
}

/// Builds the stacked landmark dataset over `[s0, s_last]` with horizon `w`.
///
/// Each episode with `event_time > s` contributes one row at `s`. Follow-up is
/// truncated at `s + w`, where rows are censored (type 0). Landmarks without a
/// recorded row are all-missing; static predictors take the episode's first
/// recorded value at every landmark.
pub fn stack_landmarks(
    episodes: &[Episode],
    schema: &PredictorSchema,
    s0: u32,
    s_last: u32,
    w: f64,
) -> Result<StackedDataset> {
    if s0 > s_last {
        return Err(Error::Validation(format!("first landmark {s0} exceeds last landmark {s_last}")));
    }
    if !(w > 0.0) {
        return Err(Error::Validation(format!("horizon must be positive, got {w}")));
    }
    let p = schema.len();
    let static_cols: Vec<usize> = (0..p).filter(|&j| schema.get(j).baseline_only).collect();

    let mut rows = Vec::new();
    for ep in episodes {
        let baseline = ep.rows.first();
        for s in s0..=s_last {
            let sf = s as f64;
            if ep.event_time <= sf {
                break;
            }
            let mut values = ep.row_at(s).map(|r| r.values.clone()).unwrap_or_else(|| vec![None; p]);
            if let Some(b) = baseline {
                for &j in &static_cols {
                    values[j] = b.values[j];
                }
            }
            let (event_time, event_type) = if ep.event_time > sf + w {
                (sf + w, EventType::Censored)
            } else {
                (ep.event_time, ep.event_type)
            };
            rows.push(StackedRow {
                episode_id: ep.episode_id,
                admission_id: ep.admission_id,
                s,
                values,
                event_time,
                event_type,
            });
        }
    }
    Ok(StackedDataset {
        schema: schema.clone(),
        rows,
        horizon: w,
        first_landmark: s0,
        last_landmark: s_last,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{LandmarkRow, Predictor, PredictorKind};

    fn schema() -> PredictorSchema {
        PredictorSchema::new(vec![
            Predictor::new("age", PredictorKind::Continuous).baseline(),
            Predictor::new("x", PredictorKind::Continuous),
        ])
        .unwrap()
    }

    #[test]
    fn empty_input_gives_empty_dataset() {
        let ds = stack_landmarks(&[], &schema(), 0, 30, 7.0).unwrap();
        assert!(ds.is_empty());
    }

    #[test]
    fn static_values_are_replicated_and_gaps_are_missing() {
        let ep = Episode::new(
            1,
            1,
            3.5,
            EventType::Death,
            vec![
                LandmarkRow::new(0, vec![Some(60.0), Some(1.0)]),
                LandmarkRow::new(2, vec![None, Some(2.0)]),
            ],
            &schema(),
        )
        .unwrap();
        let ds = stack_landmarks(&[ep], &schema(), 0, 30, 7.0).unwrap();
        assert_eq!(ds.len(), 4);
        assert!(ds.rows.iter().all(|r| r.values[0] == Some(60.0)));
        assert_eq!(ds.rows[1].values[1], None);
        assert_eq!(ds.rows[2].values[1], Some(2.0));
    }

    #[test]
    fn bad_parameters_are_rejected() {
        assert!(stack_landmarks(&[], &schema(), 3, 2, 7.0).is_err());
        assert!(stack_landmarks(&[], &schema(), 0, 2, 0.0).is_err());
    }
}
