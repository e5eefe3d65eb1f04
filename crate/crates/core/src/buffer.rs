//! Client playout-buffer estimation from classified segment completions.
//!
//! Minimal player model: each completed segment adds a fixed number of
//! media seconds, playback starts at the first completion, and the buffer
//! drains linearly at unit rate, floored at zero.

use std::net::IpAddr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct BufferConfig {
    /// Media seconds per segment.
    pub segment_duration_s: f64,
    /// Flows of one download are grouped by (client, SNI host) within this
    /// window.
    pub session_window_s: f64,
}

impl Default for BufferConfig {
    fn default() -> Self {
        BufferConfig { segment_duration_s: 4.0, session_window_s: 60.0 }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum BufferError {
    #[error("time went backwards: {now} < {last}")]
    NonMonotoneTime { now: f64, last: f64 },
    #[error("estimate and truth series differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompletionSample {
    /// Buffered media seconds right after the segment was added.
    pub buffered_s: f64,
    /// The buffer ran dry while draining up to this completion.
    pub stalled: bool,
}

#[derive(Debug, Clone)]
pub struct BufferState {
    buffered_s: f64,
    playback_started_at: Option<f64>,
    last_update: f64,
    segment_duration_s: f64,
    segments_completed: u64,
}

impl BufferState {
    pub fn new(segment_duration_s: f64) -> Self {
        BufferState {
            buffered_s: 0.0,
            playback_started_at: None,
            last_update: 0.0,
            segment_duration_s,
            segments_completed: 0,
        }
    }

    pub fn buffered_s(&self) -> f64 {
        self.buffered_s
    }

    pub fn segments_completed(&self) -> u64 {
        self.segments_completed
    }

    fn drained_to(&self, t: f64) -> f64 {
        match self.playback_started_at {
            Some(start) => {
                let elapsed = t - self.last_update.max(start);
                (self.buffered_s - elapsed.max(0.0)).max(0.0)
            }
            None => self.buffered_s,
        }
    }

    /// A segment finished downloading at `t`: drain playback since the last
    /// update, then add one segment of media. Playback starts at the first
    /// completion.
    pub fn on_segment_complete(&mut self, t: f64) -> Result<CompletionSample, BufferError> {
        if t < self.last_update {
            return Err(BufferError::NonMonotoneTime { now: t, last: self.last_update });
        }
        let drained = self.drained_to(t);
        let stalled = self.playback_started_at.is_some() && drained == 0.0;
        self.buffered_s = drained + self.segment_duration_s;
        if self.playback_started_at.is_none() {
            self.playback_started_at = Some(t);
        }
        self.last_update = t;
        self.segments_completed += 1;
        Ok(CompletionSample { buffered_s: self.buffered_s, stalled })
    }

    /// Read-only drain projection at `t`; zero before anything is buffered.
    pub fn sample_buffer(&self, t: f64) -> Result<f64, BufferError> {
        if t < self.last_update {
            return Err(BufferError::NonMonotoneTime { now: t, last: self.last_update });
        }
        Ok(self.drained_to(t))
    }

    /// Drain projection plus a re-buffering indicator (buffer at zero while
    /// playback is underway).
    pub fn sample_with_stall(&self, t: f64) -> Result<(f64, bool), BufferError> {
        let level = self.sample_buffer(t)?;
        let stalled = self.playback_started_at.is_some() && level == 0.0;
        Ok((level, stalled))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DriftReport {
    /// Absolute end-of-stream drift, averaged across streams.
    pub mean_abs_drift_s: f64,
    /// Spread of the end-of-stream drift across streams.
    pub std_s: f64,
    /// Mean |estimate - truth| over every segment completion.
    pub per_feature_mean_s: f64,
    pub per_feature_std_s: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / xs.len() as f64;
    (mean, var.sqrt())
}

/// Compare one stream's buffer estimates against ground truth, both sampled
/// at segment-completion instants.
pub fn drift_report(estimates: &[f64], truth: &[f64]) -> Result<DriftReport, BufferError> {
    drift_report_many(&[(estimates, truth)])
}

/// Aggregate drift over several streams: per-feature stats pool every
/// completion; the end-of-stream stats summarize each stream's final drift.
pub fn drift_report_many(pairs: &[(&[f64], &[f64])]) -> Result<DriftReport, BufferError> {
    let mut per_feature = Vec::new();
    let mut finals = Vec::new();
    for (est, truth) in pairs {
        if est.len() != truth.len() {
            return Err(BufferError::LengthMismatch(est.len(), truth.len()));
        }
        for (e, t) in est.iter().zip(truth.iter()) {
            per_feature.push((e - t).abs());
        }
        if let (Some(e), Some(t)) = (est.last(), truth.last()) {
            finals.push((e - t).abs());
        }
    }
    let (pf_mean, pf_std) = mean_std(&per_feature);
    let (f_mean, f_std) = mean_std(&finals);
    Ok(DriftReport {
        mean_abs_drift_s: f_mean,
        std_s: f_std,
        per_feature_mean_s: pf_mean,
        per_feature_std_s: pf_std,
    })
}

/// Key grouping the flows of one download session.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SessionKey {
    pub client: IpAddr,
    pub host: String,
}
