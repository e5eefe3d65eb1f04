//! Model file: codebook, quality profiles, optional baseline payloads, and
//! the feature configuration the model was trained under.
//!
//! The embedded feature configuration makes a model self-describing;
//! classification refuses a model whose configuration differs from the
//! runtime's unless explicitly overridden.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{Lz78Model, NaiveModel};
use crate::codebook::{Codebook, QualityProfile};
use crate::features::FeatureConfig;

pub const MODEL_SCHEMA_VERSION: u32 = 1;

/// Which per-flow quantity the model's features were built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    /// Bit-per-peak burst totals.
    #[default]
    Bitrate,
    /// Inter-arrival time deltas of accepted-byte events.
    Timediff,
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("invariant violation: {0}")]
    InvariantViolation(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Model {
    pub schema_version: u32,
    pub k: usize,
    pub centers: Vec<f64>,
    pub profiles: Vec<QualityProfile>,
    #[serde(default)]
    pub feature_kind: FeatureKind,
    pub feature_config: FeatureConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub naive: Option<NaiveModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lz78: Option<Lz78Model>,
}

impl Model {
    /// Number of quality representations.
    pub fn m(&self) -> u8 {
        self.profiles.len() as u8
    }

    pub fn codebook(&self) -> Codebook {
        Codebook::new(self.centers.clone()).expect("validated model")
    }

    pub fn label_name(&self, label: u8) -> &str {
        self.profiles
            .get(label as usize - 1)
            .map(|p| p.name.as_str())
            .unwrap_or("?")
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.schema_version != MODEL_SCHEMA_VERSION {
            return Err(ModelError::SchemaMismatch(format!(
                "schema_version {} (expected {})",
                self.schema_version, MODEL_SCHEMA_VERSION
            )));
        }
        if self.k != self.centers.len() {
            return Err(ModelError::InvariantViolation(format!(
                "k = {} but {} centers",
                self.k,
                self.centers.len()
            )));
        }
        let cb = Codebook::new(self.centers.clone())
            .map_err(|e| ModelError::InvariantViolation(e.to_string()))?;
        if self.profiles.is_empty() {
            return Err(ModelError::InvariantViolation("no quality profiles".into()));
        }
        for (i, p) in self.profiles.iter().enumerate() {
            if p.label as usize != i + 1 {
                return Err(ModelError::InvariantViolation(format!(
                    "profile {} out of order (label {})",
                    i, p.label
                )));
            }
            if p.avg_peaks.is_empty() || p.avg_peaks.len() != p.rep_string.len() {
                return Err(ModelError::InvariantViolation(format!(
                    "profile {}: avg_peaks/rep_string length mismatch",
                    p.label
                )));
            }
            if cb.quantize_all(&p.avg_peaks) != p.rep_string {
                return Err(ModelError::InvariantViolation(format!(
                    "profile {}: rep_string is not the quantized avg_peaks",
                    p.label
                )));
            }
            let mean = p.avg_peaks.iter().sum::<f64>() / p.avg_peaks.len() as f64;
            let scale = mean.abs().max(1.0);
            if (mean - p.scalar_center).abs() > 1e-9 * scale {
                return Err(ModelError::InvariantViolation(format!(
                    "profile {}: scalar_center is not the mean of avg_peaks",
                    p.label
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Model, ModelError> {
        let text = fs::read_to_string(path)?;
        Model::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Model, ModelError> {
        let value: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| ModelError::SchemaMismatch(format!("not a model file: {e}")))?;
        match value.get("schema_version").and_then(|v| v.as_u64()) {
            Some(v) if v == u64::from(MODEL_SCHEMA_VERSION) => {}
            Some(v) => {
                return Err(ModelError::SchemaMismatch(format!("unknown schema version {v}")))
            }
            None => return Err(ModelError::SchemaMismatch("missing schema_version".into())),
        }
        let model: Model = serde_json::from_value(value)
            .map_err(|e| ModelError::SchemaMismatch(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::QualityProfile;

    fn model() -> Model {
        Model {
            schema_version: MODEL_SCHEMA_VERSION,
            k: 2,
            centers: vec![1.0e6, 2.0e6],
            profiles: vec![
                QualityProfile {
                    label: 1,
                    name: "360P".into(),
                    avg_peaks: vec![1.0e6, 1.2e6],
                    rep_string: vec![0, 0],
                    scalar_center: 1.1e6,
                },
                QualityProfile {
                    label: 2,
                    name: "480P".into(),
                    avg_peaks: vec![2.0e6],
                    rep_string: vec![1],
                    scalar_center: 2.0e6,
                },
            ],
            feature_kind: FeatureKind::Bitrate,
            feature_config: FeatureConfig::default(),
            naive: None,
            lz78: None,
        }
    }

    #[test]
    fn round_trip_is_lossless() {
        let m = model();
        let back = Model::from_json(&m.to_json()).unwrap();
        assert_eq!(back.centers, m.centers);
        assert_eq!(back.profiles, m.profiles);
        assert_eq!(back.feature_config, m.feature_config);
    }

    #[test]
    fn unsorted_centers_rejected_on_load() {
        let mut m = model();
        m.centers = vec![5.0, 3.0];
        let err = Model::from_json(&m.to_json()).unwrap_err();
        assert!(matches!(err, ModelError::InvariantViolation(_)), "{err}");
    }

    #[test]
    fn rep_string_mismatch_rejected() {
        let mut m = model();
        m.profiles[0].rep_string = vec![1, 1];
        let err = Model::from_json(&m.to_json()).unwrap_err();
        assert!(matches!(err, ModelError::InvariantViolation(_)), "{err}");
    }

    #[test]
    fn unknown_schema_version_rejected() {
        let mut m = model();
        m.schema_version = 99;
        let err = Model::from_json(&m.to_json()).unwrap_err();
        assert!(matches!(err, ModelError::SchemaMismatch(_)), "{err}");
    }
}
