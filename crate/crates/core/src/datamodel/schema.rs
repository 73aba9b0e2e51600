use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashSet;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictorKind {
    Continuous,
    Binary,
    Count,
    Ordinal,
}

impl PredictorKind {
    /// Binary predictors are imputed with logistic models and compared by mode.
    pub fn is_categorical(self) -> bool {
        matches!(self, PredictorKind::Binary)
    }

    pub fn is_discrete(self) -> bool {
        !matches!(self, PredictorKind::Continuous)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictor {
    pub name: String,
    pub kind: PredictorKind,
    /// Natural log applied before imputation and modelling.
    #[serde(default)]
    pub log_transform: bool,
    /// For lumen counts: the binary catheter-type predictor this count belongs to.
    #[serde(default)]
    pub linked_catheter_type: Option<String>,
    /// Lumen count forced whenever the linked catheter type is present
    /// (2 for dialysis catheters, 1 for ports).
    #[serde(default)]
    pub fixed_lumens: Option<f64>,
    /// Static predictor measured once per episode.
    #[serde(default)]
    pub baseline_only: bool,
    /// Predictors sharing a group share one missing indicator.
    #[serde(default)]
    pub indicator_group: Option<String>,
}

impl Predictor {
    pub fn new(name: &str, kind: PredictorKind) -> Self {
        Self {
            name: name.to_string(),
            kind,
            log_transform: false,
            linked_catheter_type: None,
            fixed_lumens: None,
            baseline_only: false,
            indicator_group: None,
        }
    }

    pub fn log(mut self) -> Self {
        self.log_transform = true;
        self
    }

    pub fn baseline(mut self) -> Self {
        self.baseline_only = true;
        self
    }

    pub fn lumens_of(mut self, catheter_type: &str, fixed: Option<f64>) -> Self {
        self.linked_catheter_type = Some(catheter_type.to_string());
        self.fixed_lumens = fixed;
        self
    }

    pub fn group(mut self, group: &str) -> Self {
        self.indicator_group = Some(group.to_string());
        self
    }
}

/// Ordered, validated list of predictors. Row value vectors are indexed by it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Predictor>", into = "Vec<Predictor>")]
pub struct PredictorSchema {
    predictors: Vec<Predictor>,
}

impl TryFrom<Vec<Predictor>> for PredictorSchema {
    type Error = Error;

    fn try_from(predictors: Vec<Predictor>) -> Result<Self> {
        Self::new(predictors)
    }
}

impl From<PredictorSchema> for Vec<Predictor> {
    fn from(schema: PredictorSchema) -> Self {
        schema.predictors
    }
}

impl PredictorSchema {
    pub fn new(predictors: Vec<Predictor>) -> Result<Self> {
        let mut seen = HashSet::new();
        for p in &predictors {
            if !seen.insert(p.name.as_str()) {
                return Err(Error::Validation(format!("duplicate predictor `{}`", p.name)));
            }
            if p.log_transform && p.kind != PredictorKind::Continuous {
                return Err(Error::Validation(format!(
                    "log transform requested on non-continuous predictor `{}`",
                    p.name
                )));
            }
        }
        for p in &predictors {
            if let Some(link) = &p.linked_catheter_type {
                match predictors.iter().find(|q| &q.name == link) {
                    Some(q) if q.kind == PredictorKind::Binary => {}
                    Some(_) => {
                        return Err(Error::Validation(format!(
                            "`{}` links to `{link}`, which is not binary",
                            p.name
                        )))
                    }
                    None => {
                        return Err(Error::Validation(format!(
                            "`{}` links to unknown catheter type `{link}`",
                            p.name
                        )))
                    }
                }
            }
        }
        Ok(Self { predictors })
    }

    pub fn len(&self) -> usize {
        self.predictors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predictors.is_empty()
    }

    pub fn predictors(&self) -> &[Predictor] {
        &self.predictors
    }

    pub fn get(&self, idx: usize) -> &Predictor {
        &self.predictors[idx]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.predictors.iter().position(|p| p.name == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.predictors.iter().map(|p| p.name.as_str())
    }

    /// Hex SHA-256 of the canonical JSON form; stamped into model files.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(&self.predictors).expect("schema serializes");
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_duplicates_and_bad_links() {
        let dup = vec![
            Predictor::new("a", PredictorKind::Binary),
            Predictor::new("a", PredictorKind::Binary),
        ];
        assert!(PredictorSchema::new(dup).is_err());

        let bad_log = vec![Predictor::new("a", PredictorKind::Count).log()];
        assert!(PredictorSchema::new(bad_log).is_err());

        let dangling = vec![Predictor::new("lumens", PredictorKind::Count).lumens_of("cvc", None)];
        assert!(PredictorSchema::new(dangling).is_err());

        let ok = vec![
            Predictor::new("cvc", PredictorKind::Binary),
            Predictor::new("lumens", PredictorKind::Count).lumens_of("cvc", None),
        ];
        assert!(PredictorSchema::new(ok).is_ok());
    }

    #[test]
    fn fingerprint_tracks_content() {
        let a = PredictorSchema::new(vec![Predictor::new("x", PredictorKind::Continuous)]).unwrap();
        let b = PredictorSchema::new(vec![Predictor::new("x", PredictorKind::Continuous).log()]).unwrap();
        assert_eq!(a.fingerprint(), a.clone().fingerprint());
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint().len(), 64);
    }
}
