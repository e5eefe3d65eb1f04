//! Aggregated runtime configuration. Precedence is flags over config file
//! over built-in defaults; the CLI handles the merge, this module holds the
//! structure and defaults.

use serde::{Deserialize, Serialize};

use crate::buffer::BufferConfig;
use crate::classifier::ClassifierConfig;
use crate::dpi::DpiConfig;
use crate::features::FeatureConfig;
use crate::flow::FlowConfig;

pub const DEFAULT_SEED: u64 = 17;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct TrainConfig {
    pub k: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k: crate::codebook::DEFAULT_K,
            restarts: crate::codebook::DEFAULT_RESTARTS,
            seed: DEFAULT_SEED,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct AppConfig {
    pub flow: FlowConfig,
    pub dpi: DpiConfig,
    pub features: FeatureConfig,
    pub classifier: ClassifierConfig,
    pub buffer: BufferConfig,
    pub train: TrainConfig,
}

impl AppConfig {
    /// One-line `key=value` rendering echoed into output artifacts.
    pub fn provenance(&self) -> String {
        format!(
            "silence_gap_s={} audio_threshold_bits={} drop_first={} drop_last={} \
             idle_timeout_s={} match_domains={} anchored={} bypass_quantization={} \
             segment_duration_s={} k={} restarts={} seed={}",
            self.features.silence_gap_s,
            self.features.audio_threshold_bits,
            self.features.drop_first,
            self.features.drop_last,
            self.flow.idle_timeout_s,
            self.dpi.match_domains.join("|"),
            self.dpi.anchored,
            self.classifier.bypass_quantization,
            self.buffer.segment_duration_s,
            self.train.k,
            self.train.restarts,
            self.train.seed,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_wired() {
        let cfg = AppConfig::default();
        assert_eq!(cfg.features.silence_gap_s, 3.0);
        assert_eq!(cfg.features.audio_threshold_bits, 1_000_000.0);
        assert!(cfg.features.drop_first && cfg.features.drop_last);
        assert_eq!(cfg.flow.idle_timeout_s, 60.0);
        assert_eq!(cfg.train.k, 14);
        assert!(cfg.provenance().contains("k=14"));
    }
}
