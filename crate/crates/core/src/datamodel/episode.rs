use serde::{Deserialize, Serialize};

use super::schema::{PredictorKind, PredictorSchema};
use crate::error::{Error, Result};

/// Event coding: 0 censored, 1 CLABSI, 2 death, 3 discharge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum EventType {
    Censored,
    Clabsi,
    Death,
    Discharge,
}

impl EventType {
    pub const CAUSES: [EventType; 3] = [EventType::Clabsi, EventType::Death, EventType::Discharge];

    pub fn code(self) -> u8 {
        match self {
            EventType::Censored => 0,
            EventType::Clabsi => 1,
            EventType::Death => 2,
            EventType::Discharge => 3,
        }
    }
}

impl TryFrom<u8> for EventType {
    type Error = Error;

    fn try_from(code: u8) -> Result<Self> {
        match code {
            0 => Ok(EventType::Censored),
            1 => Ok(EventType::Clabsi),
            2 => Ok(EventType::Death),
            3 => Ok(EventType::Discharge),
            other => Err(Error::Validation(format!("unknown event type code {other}"))),
        }
    }
}

impl From<EventType> for u8 {
    fn from(e: EventType) -> u8 {
        e.code()
    }
}

/// Predictor values at one landmark; `None` marks a missing entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkRow {
    pub s: u32,
    pub values: Vec<Option<f64>>,
}

impl LandmarkRow {
    pub fn new(s: u32, values: Vec<Option<f64>>) -> Self {
        Self { s, values }
    }

    pub fn is_observed(&self, j: usize) -> bool {
        self.values[j].is_some()
    }

    pub fn validate(&self, schema: &PredictorSchema) -> Result<()> {
        check_values(&self.values, schema)
            .map_err(|msg| Error::Validation(format!("landmark {}: {msg}", self.s)))
    }
}

pub(crate) fn check_values(values: &[Option<f64>], schema: &PredictorSchema) -> std::result::Result<(), String> {
    if values.len() != schema.len() {
        return Err(format!("expected {} values, found {}", schema.len(), values.len()));
    }
    for (p, v) in schema.predictors().iter().zip(values) {
        let Some(v) = *v else { continue };
        if !v.is_finite() {
            return Err(format!("`{}` is not finite", p.name));
        }
        match p.kind {
            PredictorKind::Binary if v != 0.0 && v != 1.0 => {
                return Err(format!("`{}` = {v} is not binary", p.name))
            }
            PredictorKind::Count | PredictorKind::Ordinal if v < 0.0 => {
                return Err(format!("`{}` = {v} is negative", p.name))
            }
            _ => {}
        }
    }
    Ok(())
}

/// One patient-catheter episode with its daily landmark rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub episode_id: u64,
    pub admission_id: u64,
    /// Days since the first recorded catheter observation.
    pub event_time: f64,
    pub event_type: EventType,
    pub rows: Vec<LandmarkRow>,
}

impl Episode {
    pub fn new(
        episode_id: u64,
        admission_id: u64,
        event_time: f64,
        event_type: EventType,
        rows: Vec<LandmarkRow>,
        schema: &PredictorSchema,
    ) -> Result<Self> {
        let ep = Self { episode_id, admission_id, event_time, event_type, rows };
        ep.validate(schema)?;
        Ok(ep)
    }

    pub fn validate(&self, schema: &PredictorSchema) -> Result<()> {
        let id = self.episode_id;
        if !(self.event_time.is_finite() && self.event_time > 0.0) {
            return Err(Error::Validation(format!(
                "episode {id}: event time {} must be positive",
                self.event_time
            )));
        }
        for pair in self.rows.windows(2) {
            if pair[0].s >= pair[1].s {
                return Err(Error::Validation(format!(
                    "episode {id}: landmark rows out of order or duplicated at {}",
                    pair[1].s
                )));
            }
        }
        if let Some(last) = self.rows.last() {
            if self.event_time < last.s as f64 {
                return Err(Error::Validation(format!(
                    "episode {id}: event time {} precedes landmark {}",
                    self.event_time, last.s
                )));
            }
        }
        for row in &self.rows {
            row.validate(schema)
                .map_err(|e| Error::Validation(format!("episode {id}: {e}")))?;
        }
        Ok(())
    }

    pub fn row_at(&self, s: u32) -> Option<&LandmarkRow> {
        self.rows
            .binary_search_by_key(&s, |r| r.s)
            .ok()
            .map(|i| &self.rows[i])
    }
}

/// One catheter, in hours since admission.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CatheterInterval {
    pub admission_id: u64,
    pub start: f64,
    pub end: f64,
}

/// Episode boundaries before any landmark data is attached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeShell {
    pub episode_id: u64,
    pub admission_id: u64,
    pub start: f64,
    /// Removal time of the last catheter in the episode.
    pub last_removal: f64,
    /// Patients remain at risk for 48 hours after removal.
    pub at_risk_end: f64,
    pub n_catheters: usize,
}

pub const MERGE_GAP_HOURS: f64 = 48.0;

/// Merges catheters of the same admission into episodes when the gap between
/// one removal and the next placement is at most 48 hours.
pub fn merge_catheters_into_episodes(intervals: &[CatheterInterval]) -> Result<Vec<EpisodeShell>> {
    for iv in intervals {
        if !(iv.start.is_finite() && iv.end.is_finite()) || iv.start > iv.end {
            return Err(Error::Validation(format!(
                "admission {}: catheter interval [{}, {}] has negative duration",
                iv.admission_id, iv.start, iv.end
            )));
        }
    }
    let mut sorted = intervals.to_vec();
    sorted.sort_by(|a, b| {
        a.admission_id
            .cmp(&b.admission_id)
            .then(a.start.total_cmp(&b.start))
            .then(a.end.total_cmp(&b.end))
    });

    let mut shells: Vec<EpisodeShell> = Vec::new();
    for iv in sorted {
        if let Some(cur) = shells.last_mut() {
            if cur.admission_id == iv.admission_id && iv.start - cur.last_removal <= MERGE_GAP_HOURS {
                cur.last_removal = cur.last_removal.max(iv.end);
                cur.at_risk_end = cur.last_removal + MERGE_GAP_HOURS;
                cur.n_catheters += 1;
                continue;
            }
        }
        shells.push(EpisodeShell {
            episode_id: shells.len() as u64 + 1,
            admission_id: iv.admission_id,
            start: iv.start,
            last_removal: iv.end,
            at_risk_end: iv.end + MERGE_GAP_HOURS,
            n_catheters: 1,
        });
    }
    Ok(shells)
}
