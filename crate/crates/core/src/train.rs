//! Assemble classification models from labeled captures: run the packet
//! pipeline over every training stream, pool the features, fit the
//! codebook, and build per-quality profiles plus any requested baseline
//! payloads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::baselines::{self, BaselineError};
use crate::codebook::{self, CodebookError, TrainingSet, TrainingTrace};
use crate::config::AppConfig;
use crate::model::{FeatureKind, Model, MODEL_SCHEMA_VERSION};
use crate::pipeline;
use crate::synth::DatasetTrace;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Codebook(#[from] CodebookError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error("trace {0} yields no usable features")]
    EmptyTrace(String),
    #[error("training needs fixed-quality traces, {0} is adaptive")]
    AdaptiveTrace(String),
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub k: usize,
    pub restarts: usize,
    pub seed: u64,
    pub feature_kind: FeatureKind,
    pub with_naive: bool,
    pub with_lz78: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            k: codebook::DEFAULT_K,
            restarts: codebook::DEFAULT_RESTARTS,
            seed: crate::config::DEFAULT_SEED,
            feature_kind: FeatureKind::Bitrate,
            with_naive: false,
            with_lz78: false,
        }
    }
}

/// Ordered feature values of one capture's dominant video flow.
pub fn trace_values(
    cfg: &AppConfig,
    records: &[crate::packet::PacketRecord],
    kind: FeatureKind,
) -> Option<Vec<f64>> {
    let flows = pipeline::extract_trace(cfg, records);
    let dom = pipeline::dominant_flow(&flows)?;
    let fx = &flows[&dom];
    match kind {
        FeatureKind::Bitrate => Some(fx.features.iter().map(|f| f.value).collect()),
        FeatureKind::Timediff => baselines::time_deltas(&fx.event_times).ok(),
    }
}

pub fn build_training_set(
    cfg: &AppConfig,
    traces: &[DatasetTrace],
    names: Vec<String>,
    kind: FeatureKind,
) -> Result<TrainingSet, TrainError> {
    let mut entries = Vec::with_capacity(traces.len());
    let mut m = 0u8;
    for t in traces {
        let label = t
            .fixed_label()
            .ok_or_else(|| TrainError::AdaptiveTrace(t.title_id.clone()))?;
        m = m.max(label);
        let values = trace_values(cfg, &t.records, kind)
            .filter(|v| !v.is_empty())
            .ok_or_else(|| TrainError::EmptyTrace(t.title_id.clone()))?;
        entries.push(TrainingTrace { title_id: t.title_id.clone(), label, values });
    }
    Ok(TrainingSet::new(m, names, entries)?)
}

/// Fit codebook and profiles (and baselines) on a prepared training set.
pub fn train_model_from_set(
    ts: &TrainingSet,
    cfg: &AppConfig,
    opts: &TrainOptions,
) -> Result<Model, TrainError> {
    let values = ts.all_values();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let cb = codebook::train_codebook(&values, opts.k, opts.restarts, &mut rng)?;
    let profiles = codebook::build_profiles(ts, &cb)?;
    let naive = if opts.with_naive { Some(baselines::train_naive(ts)?) } else { None };
    let lz78 = if opts.with_lz78 {
        let sequences: Vec<(u8, Vec<usize>)> = ts
            .entries
            .iter()
            .map(|e| (e.label, cb.quantize_all(&e.values)))
            .collect();
        Some(baselines::train_lz78(&sequences, ts.m, cb.k())?)
    } else {
        None
    };
    Ok(Model {
        schema_version: MODEL_SCHEMA_VERSION,
        k: cb.k(),
        centers: cb.centers().to_vec(),
        profiles,
        feature_kind: opts.feature_kind,
        feature_config: cfg.features.clone(),
        naive,
        lz78,
    })
}

/// Full training path: extract features from fixed-quality captures and fit
/// the model.
pub fn train_model(
    cfg: &AppConfig,
    traces: &[DatasetTrace],
    names: Vec<String>,
    opts: &TrainOptions,
) -> Result<Model, TrainError> {
    let ts = build_training_set(cfg, traces, names, opts.feature_kind)?;
    train_model_from_set(&ts, cfg, opts)
}
