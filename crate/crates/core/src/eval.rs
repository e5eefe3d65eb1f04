//! Evaluation harness: confusion matrices, k and training-size sweeps, and
//! seeded trace perturbation (delay, loss) for robustness grids.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::net::IpAddr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::baselines::{self, BaselineError};
use crate::classifier::Classifier;
use crate::config::AppConfig;
use crate::features::SegmentFeature;
use crate::model::{FeatureKind, Model};
use crate::packet::{FiveTuple, PacketRecord, Transport};
use crate::pipeline;
use crate::synth::{derive_seed, DatasetTrace};
use crate::train::{self, TrainError, TrainOptions};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("model feature config differs from the runtime config")]
    ConfigMismatch,
    #[error("empty test set")]
    EmptyTestSet,
    #[error("unsupported combination: {0}")]
    UnsupportedCombo(String),
    #[error("model carries no {0} payload")]
    MissingBaseline(&'static str),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassifierKind {
    Proposed,
    Naive,
    Lz78,
}

impl ClassifierKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "proposed" => Some(ClassifierKind::Proposed),
            "naive" => Some(ClassifierKind::Naive),
            "lz78" => Some(ClassifierKind::Lz78),
            _ => None,
        }
    }
}

/// True-label rows by predicted-label columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    m: usize,
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(m: usize) -> Self {
        ConfusionMatrix { m, counts: vec![vec![0; m]; m] }
    }

    pub fn record(&mut self, truth: u8, pred: u8) {
        self.counts[truth as usize - 1][pred as usize - 1] += 1;
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sum(&self, label: u8) -> u64 {
        self.counts[label as usize - 1].iter().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let diag: u64 = (0..self.m).map(|i| self.counts[i][i]).sum();
        diag as f64 / total as f64
    }

    pub fn recall(&self, label: u8) -> f64 {
        let row = self.row_sum(label);
        if row == 0 {
            return 0.0;
        }
        self.counts[label as usize - 1][label as usize - 1] as f64 / row as f64
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        assert_eq!(self.m, other.m);
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn to_csv(&self, names: &[String]) -> String {
        let name = |i: usize| {
            names.get(i).cloned().unwrap_or_else(|| format!("Q{}", i + 1))
        };
        let mut out = String::from("true\\pred");
        for i in 0..self.m {
            let _ = write!(out, ",{}", name(i));
        }
        out.push_str(",recall\n");
        for i in 0..self.m {
            let _ = write!(out, "{}", name(i));
            for j in 0..self.m {
                let _ = write!(out, ",{}", self.counts[i][j]);
            }
            let _ = writeln!(out, ",{:.4}", self.recall(i as u8 + 1));
        }
        let _ = writeln!(out, "accuracy,{:.4}", self.accuracy());
        out
    }
}

/// Run the full pipeline over every test trace and accumulate per-segment
/// predictions against ground-truth labels.
///
/// Bit-rate classifiers decide per feature; the LZ78 baseline decides per
/// trace and its label is broadcast across the trace's segments so the
/// matrices stay comparable. Time-difference features carry no per-segment
/// alignment and are restricted to fixed-quality traces.
pub fn evaluate(
    cfg: &AppConfig,
    model: &Model,
    traces: &[DatasetTrace],
    kind: ClassifierKind,
) -> Result<ConfusionMatrix, EvalError> {
    if traces.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    if model.feature_config != cfg.features {
        return Err(EvalError::ConfigMismatch);
    }
    let mut cm = ConfusionMatrix::new(model.m() as usize);
    let clf = Classifier::new(model, cfg.classifier.clone());
    let cb = model.codebook();

    for trace in traces {
        let flows = pipeline::extract_trace(cfg, &trace.records);
        let Some(dom) = pipeline::dominant_flow(&flows) else { continue };
        let fx = &flows[&dom];
        let truth_of = |f: &SegmentFeature| trace.truth.labels.get(f.peak_index).copied();

        match (kind, model.feature_kind) {
            (ClassifierKind::Proposed, FeatureKind::Bitrate) => {
                for (f, &end) in fx.features.iter().zip(&fx.feature_ends) {
                    if let Some(truth) = truth_of(f) {
                        cm.record(truth, clf.classify(f, end).label);
                    }
                }
            }
            (ClassifierKind::Naive, FeatureKind::Bitrate) => {
                let nm = model.naive.as_ref().ok_or(EvalError::MissingBaseline("naive"))?;
                for f in &fx.features {
                    if let Some(truth) = truth_of(f) {
                        cm.record(truth, baselines::naive_classify(f.value, nm)?);
                    }
                }
            }
            (ClassifierKind::Lz78, FeatureKind::Bitrate) => {
                let lm = model.lz78.as_ref().ok_or(EvalError::MissingBaseline("lz78"))?;
                let seq: Vec<usize> = fx.features.iter().map(|f| cb.quantize(f.value)).collect();
                if seq.is_empty() {
                    continue;
                }
                let pred = baselines::lz78_classify(&seq, lm)?;
                for f in &fx.features {
                    if let Some(truth) = truth_of(f) {
                        cm.record(truth, pred);
                    }
                }
            }
            (ClassifierKind::Proposed, FeatureKind::Timediff) => {
                let truth = fixed_truth(trace)?;
                let deltas = baselines::time_deltas(&fx.event_times)?;
                for d in deltas {
                    let f = SegmentFeature { flow: dom, peak_index: 0, value: d, duration: 0.0 };
                    cm.record(truth, clf.classify(&f, 0.0).label);
                }
            }
            (ClassifierKind::Lz78, FeatureKind::Timediff) => {
                let lm = model.lz78.as_ref().ok_or(EvalError::MissingBaseline("lz78"))?;
                let truth = fixed_truth(trace)?;
                let deltas = baselines::time_deltas(&fx.event_times)?;
                let seq = cb.quantize_all(&deltas);
                let pred = baselines::lz78_classify(&seq, lm)?;
                for _ in 0..trace.truth.labels.len() {
                    cm.record(truth, pred);
                }
            }
            (ClassifierKind::Naive, FeatureKind::Timediff) => {
                return Err(EvalError::UnsupportedCombo(
                    "the naive classifier is defined on bit-rate features only".into(),
                ));
            }
        }
    }
    Ok(cm)
}

fn fixed_truth(trace: &DatasetTrace) -> Result<u8, EvalError> {
    trace.fixed_label().ok_or_else(|| {
        EvalError::UnsupportedCombo(
            "time-difference features carry no per-segment alignment; use fixed-quality traces"
                .into(),
        )
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KSweepPoint {
    pub k: usize,
    pub accuracy: f64,
}

/// Retrain at each k (fixed seeds) and evaluate on the test set.
pub fn k_sweep(
    cfg: &AppConfig,
    train_traces: &[DatasetTrace],
    test_traces: &[DatasetTrace],
    names: Vec<String>,
    ks: &[usize],
    opts: &TrainOptions,
) -> Result<Vec<KSweepPoint>, EvalError> {
    if ks.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    let ts = train::build_training_set(cfg, train_traces, names, opts.feature_kind)?;
    let mut points = Vec::with_capacity(ks.len());
    for &k in ks {
        let o = TrainOptions {
            k,
            seed: derive_seed(opts.seed, &["k-sweep", &k.to_string()]),
            ..opts.clone()
        };
        let model = train::train_model_from_set(&ts, cfg, &o)?;
        let cm = evaluate(cfg, &model, test_traces, ClassifierKind::Proposed)?;
        points.push(KSweepPoint { k, accuracy: cm.accuracy() });
    }
    Ok(points)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TitleSweepPoint {
    pub n_titles: usize,
    /// Accuracy with the flow's last peak excluded from features.
    pub accuracy_drop_last: f64,
    /// Accuracy with the last peak kept.
    pub accuracy_keep_last: f64,
}

/// Subsample training titles (seeded), retrain and evaluate per count,
/// with and without the last-peak exclusion.
pub fn training_size_sweep(
    cfg: &AppConfig,
    train_traces: &[DatasetTrace],
    test_traces: &[DatasetTrace],
    names: Vec<String>,
    counts: &[usize],
    opts: &TrainOptions,
) -> Result<Vec<TitleSweepPoint>, EvalError> {
    let mut titles: Vec<String> = train_traces.iter().map(|t| t.title_id.clone()).collect();
    titles.sort();
    titles.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, &["title-sweep"]));
    titles.shuffle(&mut rng);

    let mut points = Vec::with_capacity(counts.len());
    for &n in counts {
        let n = n.min(titles.len());
        let chosen = &titles[..n];
        let subset: Vec<DatasetTrace> = train_traces
            .iter()
            .filter(|t| chosen.contains(&t.title_id))
            .cloned()
            .collect();
        let mut acc = [0.0f64; 2];
        for (i, drop_last) in [true, false].into_iter().enumerate() {
            let mut cfg2 = cfg.clone();
            cfg2.features.drop_last = drop_last;
            let o = TrainOptions {
                seed: derive_seed(opts.seed, &["title-sweep", &n.to_string()]),
                ..opts.clone()
            };
            let model = train::train_model(&cfg2, &subset, names.clone(), &o)?;
            let cm = evaluate(&cfg2, &model, test_traces, ClassifierKind::Proposed)?;
            acc[i] = cm.accuracy();
        }
        points.push(TitleSweepPoint {
            n_titles: n,
            accuracy_drop_last: acc[0],
            accuracy_keep_last: acc[1],
        });
    }
    Ok(points)
}

/// Seeded trace perturbation.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationSpec {
    pub delay_ms: f64,
    pub jitter_ms: f64,
    pub loss_pct: f64,
    /// Delay before the injected recovery retransmission of a lost packet.
    pub rto_ms: f64,
    pub seed: u64,
}

impl Default for PerturbationSpec {
    fn default() -> Self {
        PerturbationSpec { delay_ms: 0.0, jitter_ms: 0.0, loss_pct: 0.0, rto_ms: 200.0, seed: 0 }
    }
}

impl PerturbationSpec {
    pub fn delay(delay_ms: f64, seed: u64) -> Self {
        PerturbationSpec {
            delay_ms,
            jitter_ms: delay_ms * 0.1,
            ..PerturbationSpec { seed, ..PerturbationSpec::default() }
        }
    }

    pub fn loss(loss_pct: f64, seed: u64) -> Self {
        PerturbationSpec { loss_pct, seed, ..PerturbationSpec::default() }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if !(0.0..100.0).contains(&self.loss_pct) {
            return Err(EvalError::UnsupportedCombo("loss_pct must be in [0, 100)".into()));
        }
        if self.delay_ms < 0.0 || self.jitter_ms < 0.0 || self.rto_ms < 0.0 {
            return Err(EvalError::UnsupportedCombo("negative perturbation".into()));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.delay_ms == 0.0 && self.jitter_ms == 0.0 && self.loss_pct == 0.0
    }
}

fn pair_key(t: &FiveTuple) -> (Transport, (IpAddr, u16), (IpAddr, u16)) {
    let a = (t.src_addr, t.src_port);
    let b = (t.dst_addr, t.dst_port);
    if a <= b {
        (t.transport, a, b)
    } else {
        (t.transport, b, a)
    }
}

/// Delay shifts every server-to-client packet by `delay_ms` plus uniform
/// jitter, then re-sorts. A loss event models an observer upstream of the
/// drop point: the original passes by, and the sender's recovery copy with
/// the same sequence number follows `rto_ms` later, which the flow layer's
/// retransmission filter must count exactly once.
pub fn perturb_trace(records: &[PacketRecord], spec: &PerturbationSpec) -> Vec<PacketRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    // The side sending the first SYN is the client; fall back to the first
    // packet's sender.
    let mut clients: HashMap<(Transport, (IpAddr, u16), (IpAddr, u16)), (IpAddr, u16)> =
        HashMap::new();
    for r in records {
        let key = pair_key(&r.tuple);
        let sender = (r.tuple.src_addr, r.tuple.src_port);
        let receiver = (r.tuple.dst_addr, r.tuple.dst_port);
        clients.entry(key).or_insert(if r.flags.syn && r.flags.ack { receiver } else { sender });
    }

    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let client = clients[&pair_key(&r.tuple)];
        let downstream = (r.tuple.dst_addr, r.tuple.dst_port) == client;
        if !downstream {
            out.push(r.clone());
            continue;
        }
        let mut moved = r.clone();
        if spec.delay_ms > 0.0 || spec.jitter_ms > 0.0 {
            let jitter = if spec.jitter_ms > 0.0 {
                rng.random::<f64>() * spec.jitter_ms
            } else {
                0.0
            };
            moved.ts += (spec.delay_ms + jitter) / 1000.0;
        }
        let lost = r.payload_len > 0
            && spec.loss_pct > 0.0
            && rng.random::<f64>() * 100.0 < spec.loss_pct;
        if lost {
            let mut retrans = moved.clone();
            retrans.ts = moved.ts + spec.rto_ms / 1000.0;
            out.push(moved);
            out.push(retrans);
        } else {
            out.push(moved);
        }
    }
    out.sort_by(|a, b| a.ts.partial_cmp(&b.ts).expect("finite ts"));
    out
}

/// Apply one perturbation to every trace of a test set, with per-trace
/// derived seeds.
pub fn perturb_set(traces: &[DatasetTrace], spec: &PerturbationSpec) -> Vec<DatasetTrace> {
    traces
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let s = PerturbationSpec {
                seed: derive_seed(spec.seed, &["perturb", &i.to_string()]),
                ..spec.clone()
            };
            DatasetTrace { records: perturb_trace(&t.records, &s), ..t.clone() }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub delay_ms: f64,
    pub loss_pct: f64,
    pub accuracy: f64,
}

/// Robustness grid: evaluate the proposed classifier under every
/// delay-loss combination.
pub fn robustness_grid(
    cfg: &AppConfig,
    model: &Model,
    test_traces: &[DatasetTrace],
    delays_ms: &[f64],
    losses_pct: &[f64],
    seed: u64,
) -> Result<Vec<GridPoint>, EvalError> {
    let mut grid = Vec::with_capacity(delays_ms.len() * losses_pct.len());
    for &delay in delays_ms {
        for &loss in losses_pct {
            let spec = PerturbationSpec {
                delay_ms: delay,
                jitter_ms: delay * 0.1,
                loss_pct: loss,
                rto_ms: 200.0,
                seed: derive_seed(seed, &["grid", &format!("{delay}-{loss}")]),
            };
            spec.validate()?;
            let perturbed = perturb_set(test_traces, &spec);
            let cm = evaluate(cfg, model, &perturbed, ClassifierKind::Proposed)?;
            grid.push(GridPoint { delay_ms: delay, loss_pct: loss, accuracy: cm.accuracy() });
        }
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::packet::TcpFlags;
    use std::net::Ipv4Addr;

    #[test]
    fn confusion_matrix_accounting() {
        let mut cm = ConfusionMatrix::new(3);
        for _ in 0..30 {
            cm.record(1, 1);
            cm.record(2, 2);
            cm.record(3, 3);
        }
        assert_eq!(cm.accuracy(), 1.0);
        assert_eq!(cm.total(), 90);
        assert_eq!(cm.row_sum(2), 30);

        let mut always_one = ConfusionMatrix::new(3);
        for truth in [1u8, 2, 3] {
            for _ in 0..10 {
                always_one.record(truth, 1);
            }
        }
        assert!((always_one.accuracy() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(always_one.counts()[2][0], 10);
        assert_eq!(always_one.recall(1), 1.0);
        assert_eq!(always_one.recall(3), 0.0);
    }

    #[test]
    fn row_sums_survive_prediction_relabeling() {
        let mut a = ConfusionMatrix::new(2);
        let mut b = ConfusionMatrix::new(2);
        let pairs = [(1u8, 1u8), (1, 2), (2, 2), (2, 2), (1, 1)];
        for (t, p) in pairs {
            a.record(t, p);
            b.record(t, 3 - p); // swap predicted labels
        }
        assert_eq!(a.row_sum(1), b.row_sum(1));
        assert_eq!(a.row_sum(2), b.row_sum(2));
    }

    fn sample_trace() -> Vec<PacketRecord> {
        let tuple = FiveTuple {
            transport: Transport::Tcp,
            src_addr: IpAddr::V4(Ipv4Addr::new(10, 0, 0, 2)),
            dst_addr: IpAddr::V4(Ipv4Addr::new(203, 0, 113, 5)),
            src_port: 50000,
            dst_port: 443,
        };
        let mut records = vec![PacketRecord {
            ts: 0.0,
            tuple,
            seq: Some(100),
            ack: None,
            payload_len: 0,
            flags: TcpFlags::SYN,
            payload: None,
        }];
        let mut seq = 9000u32;
        for i in 0..20u32 {
            records.push(PacketRecord {
                ts: 0.5 + i as f64 * 0.01,
                tuple: tuple.reversed(),
                seq: Some(seq),
                ack: Some(101),
                payload_len: 1460,
                flags: TcpFlags::ACK,
                payload: None,
            });
            seq += 1460;
        }
        records
    }

    #[test]
    fn zero_perturbation_is_identity() {
        let records = sample_trace();
        let spec = PerturbationSpec { seed: 5, ..PerturbationSpec::default() };
        assert!(spec.is_identity());
        assert_eq!(perturb_trace(&records, &spec), records);
    }

    #[test]
    fn loss_injects_same_seq_duplicates() {
        let records = sample_trace();
        let spec = PerturbationSpec { loss_pct: 50.0, seed: 5, ..PerturbationSpec::default() };
        let out = perturb_trace(&records, &spec);
        assert!(out.len() > records.len());
        let extra = out.len() - records.len();
        // seeded binomial around half of the 20 payload packets
        assert!(extra >= 4 && extra <= 16, "extra={extra}");
        // every injected copy shares seq/len with an original
        for r in &out {
            if r.payload_len > 0 {
                assert!(records.iter().any(|o| o.seq == r.seq && o.payload_len == r.payload_len));
            }
        }
    }

    #[test]
    fn delay_shifts_only_downstream() {
        let records = sample_trace();
        let spec =
            PerturbationSpec { delay_ms: 500.0, jitter_ms: 0.0, seed: 5, ..Default::default() };
        let out = perturb_trace(&records, &spec);
        assert_eq!(out[0].ts, 0.0); // client SYN is untouched
        let first_payload = out.iter().find(|r| r.payload_len > 0).unwrap();
        assert!((first_payload.ts - 1.0).abs() < 1e-9);
    }
}
