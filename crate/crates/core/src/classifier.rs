//! Per-segment quality classification.
//!
//! Each feature is classified by itself, with no dependency on past or
//! future samples: quantize the value onto the codebook, then pick the
//! quality profile whose scalar center is nearest the assigned symbol's
//! center. Ties break toward the lower quality label, which never
//! over-reports quality.

use serde::{Deserialize, Serialize};

use crate::codebook::Codebook;
use crate::features::SegmentFeature;
use crate::flow::FlowId;
use crate::model::Model;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct ClassifierConfig {
    /// Skip the codebook stage and compare the raw feature value against
    /// the profile centers directly (ablation switch).
    pub bypass_quantization: bool,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig { bypass_quantization: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassifiedSegment {
    pub flow: FlowId,
    pub peak_index: usize,
    pub symbol: usize,
    pub label: u8,
    /// |feature value - chosen profile scalar center| in bits.
    pub distance: f64,
    /// Peak end time.
    pub timestamp: f64,
}

/// A model prepared for repeated classification.
pub struct Classifier<'m> {
    model: &'m Model,
    codebook: Codebook,
    cfg: ClassifierConfig,
}

impl<'m> Classifier<'m> {
    pub fn new(model: &'m Model, cfg: ClassifierConfig) -> Self {
        Classifier { codebook: model.codebook(), model, cfg }
    }

    pub fn model(&self) -> &Model {
        self.model
    }

    /// Stateless per-feature decision. `timestamp` is the peak end carried
    /// on the feature's duration metadata by the caller.
    pub fn classify(&self, f: &SegmentFeature, timestamp: f64) -> ClassifiedSegment {
        let symbol = self.codebook.quantize(f.value);
        let anchor = if self.cfg.bypass_quantization {
            f.value
        } else {
            self.codebook.center(symbol)
        };
        let mut label = 1u8;
        let mut best = f64::INFINITY;
        for p in &self.model.profiles {
            let d = (anchor - p.scalar_center).abs();
            if d < best {
                best = d;
                label = p.label;
            }
        }
        let chosen = &self.model.profiles[label as usize - 1];
        ClassifiedSegment {
            flow: f.flow,
            peak_index: f.peak_index,
            symbol,
            label,
            distance: (f.value - chosen.scalar_center).abs(),
            timestamp,
        }
    }
}

/// One-shot form of [`Classifier::classify`].
pub fn classify_feature(
    f: &SegmentFeature,
    model: &Model,
    cfg: &ClassifierConfig,
    timestamp: f64,
) -> ClassifiedSegment {
    Classifier::new(model, cfg.clone()).classify(f, timestamp)
}

/// Element-wise classification of a flow's ordered features; order is
/// preserved and each decision is independent of the rest.
pub fn classify_stream(
    features: &[SegmentFeature],
    model: &Model,
    cfg: &ClassifierConfig,
) -> Vec<ClassifiedSegment> {
    let clf = Classifier::new(model, cfg.clone());
    features.iter().map(|f| clf.classify(f, 0.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::QualityProfile;
    use crate::features::FeatureConfig;
    use crate::model::{FeatureKind, MODEL_SCHEMA_VERSION};
    use proptest::prelude::*;

    fn profile(label: u8, center: f64, cb: &Codebook) -> QualityProfile {
        QualityProfile {
            label,
            name: format!("{}P", 240 + 120 * label as u32),
            avg_peaks: vec![center],
            rep_string: vec![cb.quantize(center)],
            scalar_center: center,
        }
    }

    fn model_with(centers: Vec<f64>, scalar_centers: &[f64]) -> Model {
        let cb = Codebook::new(centers.clone()).unwrap();
        Model {
            schema_version: MODEL_SCHEMA_VERSION,
            k: centers.len(),
            centers,
            profiles: scalar_centers
                .iter()
                .enumerate()
                .map(|(i, &c)| profile(i as u8 + 1, c, &cb))
                .collect(),
            feature_kind: FeatureKind::Bitrate,
            feature_config: FeatureConfig::default(),
            naive: None,
            lz78: None,
        }
    }

    fn feat(value: f64) -> SegmentFeature {
        SegmentFeature { flow: FlowId(1), peak_index: 3, value, duration: 1.0 }
    }

    #[test]
    fn nearest_profile_wins() {
        // codebook center nearest to the feature sits at 1.9 Mbit
        let model = model_with(vec![1.2e6, 1.9e6, 4.0e6], &[1.2e6, 2.0e6, 4.0e6]);
        let cfg = ClassifierConfig::default();
        let seg = classify_feature(&feat(1.85e6), &model, &cfg, 9.0);
        assert_eq!(seg.label, 2);
        assert_eq!(seg.symbol, 1);
        assert_eq!(seg.timestamp, 9.0);
    }

    #[test]
    fn exact_center_has_zero_distance() {
        let model = model_with(vec![1.2e6, 2.0e6, 4.0e6], &[1.2e6, 2.0e6, 4.0e6]);
        let seg = classify_feature(&feat(2.0e6), &model, &ClassifierConfig::default(), 0.0);
        assert_eq!(seg.label, 2);
        assert_eq!(seg.distance, 0.0);
    }

    #[test]
    fn midpoint_tie_breaks_low() {
        let model = model_with(vec![3.0e6], &[2.0e6, 4.0e6]);
        // anchor = 3.0 Mbit is equidistant from labels 1 and 2
        let seg = classify_feature(&feat(3.0e6), &model, &ClassifierConfig::default(), 0.0);
        assert_eq!(seg.label, 1);
    }

    #[test]
    fn empty_stream_classifies_to_nothing() {
        let model = model_with(vec![1.0e6], &[1.0e6]);
        assert!(classify_stream(&[], &model, &ClassifierConfig::default()).is_empty());
    }

    proptest! {
        /// Shuffling input order never changes any individual decision.
        #[test]
        fn statelessness(values in proptest::collection::vec(0.5e6f64..5e6, 1..30), rot in 0usize..30) {
            let model = model_with(vec![1.2e6, 2.0e6, 4.0e6], &[1.2e6, 2.0e6, 4.0e6]);
            let cfg = ClassifierConfig::default();
            let features: Vec<SegmentFeature> = values.iter().map(|&v| feat(v)).collect();
            let base = classify_stream(&features, &model, &cfg);
            let mut rotated = features.clone();
            rotated.rotate_left(rot % features.len().max(1));
            let out = classify_stream(&rotated, &model, &cfg);
            for (f, seg) in rotated.iter().zip(&out) {
                let original = base[features.iter().position(|x| x == f).unwrap()].clone();
                prop_assert_eq!(seg.label, original.label);
                prop_assert_eq!(seg.symbol, original.symbol);
            }
        }

        /// Scaling every feature and every model center by the same positive
        /// constant leaves all labels unchanged.
        #[test]
        fn scale_covariance(values in proptest::collection::vec(0.5e6f64..5e6, 1..20), scale in 0.01f64..100.0) {
            let centers = vec![1.2e6, 2.0e6, 4.0e6];
            let model = model_with(centers.clone(), &centers);
            let scaled_centers: Vec<f64> = centers.iter().map(|c| c * scale).collect();
            let scaled_model = model_with(scaled_centers.clone(), &scaled_centers);
            let cfg = ClassifierConfig::default();
            for &v in &values {
                let a = classify_feature(&feat(v), &model, &cfg, 0.0);
                let b = classify_feature(&feat(v * scale), &scaled_model, &cfg, 0.0);
                prop_assert_eq!(a.label, b.label);
            }
        }
    }
}
