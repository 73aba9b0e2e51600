//! Versioned on-disk wrapper for fitted models.
//!
//! The payload is bincode, base64-encoded inside a small JSON document that
//! records what the model is and which predictor schema it was fitted on.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ENVELOPE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub version: u32,
    /// `imputer` or `supermodel`.
    pub kind: String,
    pub strategy: String,
    pub schema_hash: String,
    pub seed: u64,
    pub payload: String,
}

impl Envelope {
    pub fn wrap<T: Serialize>(kind: &str, strategy: &str, schema_hash: &str, seed: u64, value: &T) -> Result<Self> {
        let bytes = bincode::serialize(value).map_err(|e| Error::Model(format!("encode: {e}")))?;
        Ok(Self {
            version: ENVELOPE_VERSION,
            kind: kind.into(),
            strategy: strategy.into(),
            schema_hash: schema_hash.into(),
            seed,
            payload: STANDARD.encode(bytes),
        })
    }

    pub fn unwrap<T: DeserializeOwned>(&self, kind: &str) -> Result<T> {
        if self.version != ENVELOPE_VERSION {
            return Err(Error::Model(format!("unsupported model version {}", self.version)));
        }
        if self.kind != kind {
            return Err(Error::Model(format!("expected a {kind} model, found {}", self.kind)));
        }
        let bytes = STANDARD.decode(&self.payload).map_err(|e| Error::Model(format!("payload: {e}")))?;
        bincode::deserialize(&bytes).map_err(|e| Error::Model(format!("decode: {e}")))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_kind_check() {
        let value = (vec![1.5f64, f64::MIN_POSITIVE], "x".to_string());
        let env = Envelope::wrap("imputer", "median", "abc", 9, &value).unwrap();
        let back = Envelope::from_json(&env.to_json().unwrap()).unwrap();
        assert_eq!(back.unwrap::<(Vec<f64>, String)>("imputer").unwrap(), value);
        assert!(back.unwrap::<(Vec<f64>, String)>("supermodel").is_err());
    }
}
