//! Synthetic DASH-over-TLS traffic with ground truth.
//!
//! Each generated stream is a TCP handshake, a well-formed ClientHello
//! whose SNI matches the configured video domain, then one payload burst
//! per video segment, bursts separated by a little more than the silence
//! gap. Audio rides in a companion flow at an order of magnitude below the
//! lowest video quality, so any threshold between the two separates them.
//! Per-segment quality labels, exact segment bits, completion times and
//! the true playout-buffer trajectory are emitted alongside the packets.

use std::fs;
use std::net::{IpAddr, Ipv4Addr};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dpi::encode_client_hello;
use crate::packet::{
    read_jsonl, write_jsonl, FiveTuple, PacketRecord, TcpFlags, Transport,
};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("io failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad manifest: {0}")]
    BadManifest(String),
    #[error("packet file: {0}")]
    Packet(#[from] crate::packet::PacketError),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct QualitySpec {
    pub label: u8,
    pub name: String,
    pub mean_bits: f64,
    pub std_bits: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AudioSpec {
    pub mean_bits: f64,
    pub period_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TraceMode {
    Fixed(u8),
    /// Per-segment label schedule.
    Adaptive(Vec<u8>),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct TraceSpec {
    pub n_titles: usize,
    pub qualities: Vec<QualitySpec>,
    pub segment_duration_s: f64,
    pub segments_per_title: usize,
    pub audio: AudioSpec,
    pub packet_size: usize,
    pub silence_gap_s: f64,
    /// Probability of injecting an immediate duplicate after each payload
    /// packet, exercising the retransmission filter.
    pub retrans_rate: f64,
    pub sni_domain: String,
    /// Net burst pacing rate.
    pub download_mbps: f64,
    /// Floor for video segment draws, keeping every video burst above the
    /// audio threshold.
    pub min_video_bits: f64,
    /// Streams per adaptive test set.
    pub adaptive_count: usize,
    pub seed: u64,
}

impl Default for TraceSpec {
    fn default() -> Self {
        TraceSpec {
            n_titles: 40,
            qualities: vec![
                QualitySpec { label: 1, name: "360P".into(), mean_bits: 1.2e6, std_bits: 0.18e6 },
                QualitySpec { label: 2, name: "480P".into(), mean_bits: 2.0e6, std_bits: 0.28e6 },
                QualitySpec { label: 3, name: "720P".into(), mean_bits: 4.0e6, std_bits: 0.75e6 },
            ],
            segment_duration_s: 4.0,
            segments_per_title: 12,
            audio: AudioSpec { mean_bits: 1.0e5, period_s: 8.0 },
            packet_size: 1460,
            silence_gap_s: 3.0,
            retrans_rate: 0.0,
            sni_domain: "googlevideos.com".into(),
            download_mbps: 4.0,
            min_video_bits: 1.05e6,
            adaptive_count: 5,
            seed: crate::config::DEFAULT_SEED,
        }
    }
}

impl TraceSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.qualities.is_empty() {
            return Err(SynthError::InvalidSpec("no qualities".into()));
        }
        for (i, q) in self.qualities.iter().enumerate() {
            if q.label as usize != i + 1 {
                return Err(SynthError::InvalidSpec("labels must run 1..=m".into()));
            }
            if q.std_bits <= 0.0 || q.mean_bits <= 0.0 {
                return Err(SynthError::InvalidSpec("quality mean/std must be positive".into()));
            }
        }
        if self.qualities.windows(2).any(|w| w[0].mean_bits >= w[1].mean_bits) {
            return Err(SynthError::InvalidSpec(
                "quality means must increase strictly with label".into(),
            ));
        }
        if self.segments_per_title == 0 || self.n_titles == 0 {
            return Err(SynthError::InvalidSpec("need at least one title and segment".into()));
        }
        if self.packet_size < 64 {
            return Err(SynthError::InvalidSpec("packet_size too small".into()));
        }
        if !(0.0..1.0).contains(&self.retrans_rate) {
            return Err(SynthError::InvalidSpec("retrans_rate must be in [0,1)".into()));
        }
        if self.download_mbps <= 0.0 || self.silence_gap_s <= 0.0 {
            return Err(SynthError::InvalidSpec("pacing parameters must be positive".into()));
        }
        Ok(())
    }

    pub fn m(&self) -> u8 {
        self.qualities.len() as u8
    }

    pub fn quality_names(&self) -> Vec<String> {
        self.qualities.iter().map(|q| q.name.clone()).collect()
    }
}

/// Oracle data accompanying one generated stream.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    pub title_id: String,
    /// One quality label per video segment, aligned to emitted peaks.
    pub labels: Vec<u8>,
    /// Exact bits of each video segment burst.
    pub segment_bits: Vec<f64>,
    /// Timestamp of each segment's last payload packet.
    pub completions: Vec<f64>,
    /// True playout-buffer level right after each completion.
    pub buffer_truth: Vec<f64>,
}

fn round_us(t: f64) -> f64 {
    (t * 1e6).round() / 1e6
}

/// Deterministic per-stream seed derivation (FNV-1a over tag strings).
pub fn derive_seed(base: u64, parts: &[&str]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ base.wrapping_mul(0x1000_0000_01b3);
    for p in parts {
        for b in p.as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x1000_0000_01b3);
        }
        h ^= 0xff;
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    h
}

struct FlowWriter {
    tuple: FiveTuple,
    seq_up: u32,
    seq_down: u32,
    records: Vec<PacketRecord>,
    retrans_rate: f64,
    /// Separate stream for duplicate injection, so enabling retransmissions
    /// leaves the underlying trace draws untouched.
    dup_rng: ChaCha8Rng,
}

impl FlowWriter {
    fn new(tuple: FiveTuple, rng: &mut ChaCha8Rng, retrans_rate: f64) -> Self {
        FlowWriter {
            tuple,
            seq_up: rng.random(),
            seq_down: rng.random(),
            records: Vec::new(),
            retrans_rate,
            dup_rng: ChaCha8Rng::seed_from_u64(rng.random()),
        }
    }

    fn handshake(&mut self, t: f64) {
        self.records.push(PacketRecord {
            ts: round_us(t),
            tuple: self.tuple,
            seq: Some(self.seq_up),
            ack: None,
            payload_len: 0,
            flags: TcpFlags::SYN,
            payload: None,
        });
        self.records.push(PacketRecord {
            ts: round_us(t + 0.010),
            tuple: self.tuple.reversed(),
            seq: Some(self.seq_down),
            ack: Some(self.seq_up.wrapping_add(1)),
            payload_len: 0,
            flags: TcpFlags::syn_ack(),
            payload: None,
        });
        self.seq_up = self.seq_up.wrapping_add(1);
        self.seq_down = self.seq_down.wrapping_add(1);
        self.records.push(PacketRecord {
            ts: round_us(t + 0.020),
            tuple: self.tuple,
            seq: Some(self.seq_up),
            ack: Some(self.seq_down),
            payload_len: 0,
            flags: TcpFlags::ACK,
            payload: None,
        });
    }

    fn client_hello(&mut self, t: f64, host: &str) {
        let payload = encode_client_hello(host);
        self.records.push(PacketRecord {
            ts: round_us(t),
            tuple: self.tuple,
            seq: Some(self.seq_up),
            ack: Some(self.seq_down),
            payload_len: payload.len() as u32,
            flags: TcpFlags::psh_ack(),
            payload: Some(payload.clone()),
        });
        self.seq_up = self.seq_up.wrapping_add(payload.len() as u32);
    }

    /// Emit one server burst totalling exactly `bytes`, paced from `start`
    /// at `mbps`. Returns the timestamp of the burst's last packet.
    fn burst(&mut self, start: f64, bytes: u64, mss: usize, mbps: f64) -> f64 {
        let n_pkts = bytes.div_ceil(mss as u64).max(1);
        let duration = (bytes as f64 * 8.0) / (mbps * 1e6);
        let interval = duration / n_pkts as f64;
        let mut remaining = bytes;
        let mut last_ts = start;
        for j in 0..n_pkts {
            let len = remaining.min(mss as u64) as u32;
            remaining -= u64::from(len);
            let ts = round_us(start + j as f64 * interval);
            last_ts = ts;
            let rec = PacketRecord {
                ts,
                tuple: self.tuple.reversed(),
                seq: Some(self.seq_down),
                ack: Some(self.seq_up),
                payload_len: len,
                flags: if j + 1 == n_pkts { TcpFlags::psh_ack() } else { TcpFlags::ACK },
                payload: None,
            };
            self.seq_down = self.seq_down.wrapping_add(len);
            let dup = self.retrans_rate > 0.0 && self.dup_rng.random::<f64>() < self.retrans_rate;
            self.records.push(rec.clone());
            if dup {
                self.records.push(rec);
            }
        }
        last_ts
    }

    fn fin(&mut self, t: f64) {
        self.records.push(PacketRecord {
            ts: round_us(t),
            tuple: self.tuple.reversed(),
            seq: Some(self.seq_down),
            ack: Some(self.seq_up),
            payload_len: 0,
            flags: TcpFlags::fin_ack(),
            payload: None,
        });
        self.records.push(PacketRecord {
            ts: round_us(t + 0.010),
            tuple: self.tuple,
            seq: Some(self.seq_up),
            ack: Some(self.seq_down.wrapping_add(1)),
            payload_len: 0,
            flags: TcpFlags::fin_ack(),
            payload: None,
        });
    }
}

fn rand_host(rng: &mut ChaCha8Rng, domain: &str) -> String {
    let tag: String = (0..8).map(|_| (b'a' + rng.random_range(0..26u8)) as char).collect();
    format!("r{}---sn-{}.{}", rng.random_range(1..9u8), tag, domain)
}

/// The playout model shared with the buffer estimator: drain linearly from
/// the first completion, floor at zero, add one segment per completion.
pub fn simulate_buffer_truth(completions: &[f64], segment_duration_s: f64) -> Vec<f64> {
    let mut buffered = 0.0f64;
    let mut started: Option<f64> = None;
    let mut last = 0.0f64;
    let mut truth = Vec::with_capacity(completions.len());
    for &t in completions {
        if let Some(s) = started {
            let elapsed = (t - last.max(s)).max(0.0);
            buffered = (buffered - elapsed).max(0.0);
        }
        buffered += segment_duration_s;
        if started.is_none() {
            started = Some(t);
        }
        last = t;
        truth.push(buffered);
    }
    truth
}

/// Generate one labeled stream: packet records in time order plus ground
/// truth.
pub fn generate_trace(
    spec: &TraceSpec,
    title_id: &str,
    mode: &TraceMode,
    stream_seed: u64,
) -> Result<(Vec<PacketRecord>, GroundTruth), SynthError> {
    spec.validate()?;
    let labels: Vec<u8> = match mode {
        TraceMode::Fixed(q) => {
            if *q == 0 || *q > spec.m() {
                return Err(SynthError::InvalidSpec(format!("quality {q} out of range")));
            }
            vec![*q; spec.segments_per_title]
        }
        TraceMode::Adaptive(schedule) => {
            if schedule.len() != spec.segments_per_title {
                return Err(SynthError::InvalidSpec("schedule length != segments".into()));
            }
            if schedule.iter().any(|q| *q == 0 || *q > spec.m()) {
                return Err(SynthError::InvalidSpec("schedule label out of range".into()));
            }
            schedule.clone()
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed);
    let client = IpAddr::V4(Ipv4Addr::new(10, 0, rng.random(), rng.random_range(1..255)));
    let server = IpAddr::V4(Ipv4Addr::new(203, 0, 113, rng.random_range(1..255)));
    let base_port = rng.random_range(49152..65000u16);
    let video_tuple = FiveTuple {
        transport: Transport::Tcp,
        src_addr: client,
        dst_addr: server,
        src_port: base_port,
        dst_port: 443,
    };
    let audio_tuple = FiveTuple { src_port: base_port + 1, ..video_tuple };

    let video_host = rand_host(&mut rng, &spec.sni_domain);
    let audio_host = rand_host(&mut rng, &spec.sni_domain);

    let mut video = FlowWriter::new(video_tuple, &mut rng, spec.retrans_rate);
    video.handshake(0.0);
    video.client_hello(0.025, &video_host);

    let mut segment_bits = Vec::with_capacity(labels.len());
    let mut completions = Vec::with_capacity(labels.len());
    let mut burst_start = 0.5;
    for &label in &labels {
        let q = &spec.qualities[label as usize - 1];
        let normal = Normal::new(q.mean_bits, q.std_bits).expect("validated std");
        let draw = normal.sample(&mut rng).max(spec.min_video_bits);
        let bytes = ((draw / 8.0).round() as u64).max(1);
        let end = video.burst(burst_start, bytes, spec.packet_size, spec.download_mbps);
        segment_bits.push((bytes * 8) as f64);
        completions.push(end);
        burst_start = end + spec.silence_gap_s + rng.random_range(0.2..1.0);
    }
    let video_end = *completions.last().expect("at least one segment");
    video.fin(video_end + 0.100);

    let mut records = video.records;
    if spec.audio.mean_bits > 0.0 {
        let mut audio = FlowWriter::new(audio_tuple, &mut rng, spec.retrans_rate);
        audio.handshake(0.1);
        audio.client_hello(0.125, &audio_host);
        let audio_normal =
            Normal::new(spec.audio.mean_bits, spec.audio.mean_bits * 0.1).expect("positive");
        let mut t = 1.0;
        let mut audio_end = t;
        while t < video_end {
            let draw = audio_normal
                .sample(&mut rng)
                .clamp(spec.audio.mean_bits * 0.5, spec.audio.mean_bits * 1.5);
            let bytes = ((draw / 8.0).round() as u64).max(1);
            audio_end = audio.burst(t, bytes, spec.packet_size, spec.download_mbps);
            t += spec.audio.period_s;
        }
        audio.fin(audio_end + 0.100);
        records.extend(audio.records);
    }
    records.sort_by(|a, b| a.ts.partial_cmp(&b.ts).expect("finite ts"));

    let buffer_truth = simulate_buffer_truth(&completions, spec.segment_duration_s);
    Ok((
        records,
        GroundTruth {
            title_id: title_id.to_string(),
            labels,
            segment_bits,
            completions,
            buffer_truth,
        },
    ))
}

/// Random adaptive schedule: one or two switches at interior segments, in
/// the style of a player stepping between representations mid-stream.
pub fn random_schedule(spec: &TraceSpec, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let n = spec.segments_per_title;
    let m = spec.m();
    let mut schedule = vec![rng.random_range(1..=m); n];
    if n < 6 {
        return schedule;
    }
    let n_switches = if rng.random::<bool>() { 2 } else { 1 };
    let mut points: Vec<usize> = Vec::new();
    while points.len() < n_switches {
        let p = rng.random_range(2..n - 2);
        if !points.contains(&p) {
            points.push(p);
        }
    }
    points.sort();
    for p in points {
        let current = schedule[p - 1];
        let mut next = rng.random_range(1..=m);
        while next == current {
            next = rng.random_range(1..=m);
        }
        for s in schedule.iter_mut().skip(p) {
            *s = next;
        }
    }
    schedule
}

/// One stream of a dataset, with packets in memory and its ground truth.
#[derive(Debug, Clone)]
pub struct DatasetTrace {
    pub title_id: String,
    pub mode: TraceMode,
    pub truth: GroundTruth,
    pub records: Vec<PacketRecord>,
}

impl DatasetTrace {
    pub fn fixed_label(&self) -> Option<u8> {
        match self.mode {
            TraceMode::Fixed(q) => Some(q),
            TraceMode::Adaptive(_) => None,
        }
    }
}

/// In-memory dataset mirroring the train/test split shape: fixed-quality
/// training downloads, a held-out fixed test set over the same titles, and
/// two small adaptive sets (seen and unseen titles).
#[derive(Debug, Clone)]
pub struct Dataset {
    pub spec: TraceSpec,
    pub train: Vec<DatasetTrace>,
    pub test_fixed: Vec<DatasetTrace>,
    pub test_adaptive_seen: Vec<DatasetTrace>,
    pub test_adaptive_unseen: Vec<DatasetTrace>,
}

pub fn generate_dataset(spec: &TraceSpec) -> Result<Dataset, SynthError> {
    spec.validate()?;
    let titles: Vec<String> = (0..spec.n_titles).map(|i| format!("title-{i:03}")).collect();
    let mut train = Vec::new();
    let mut test_fixed = Vec::new();
    for title in &titles {
        for q in 1..=spec.m() {
            let qs = q.to_string();
            let seed = derive_seed(spec.seed, &["train", title, &qs]);
            let (records, truth) = generate_trace(spec, title, &TraceMode::Fixed(q), seed)?;
            train.push(DatasetTrace {
                title_id: title.clone(),
                mode: TraceMode::Fixed(q),
                truth,
                records,
            });
            let seed = derive_seed(spec.seed, &["test-fixed", title, &qs]);
            let (records, truth) = generate_trace(spec, title, &TraceMode::Fixed(q), seed)?;
            test_fixed.push(DatasetTrace {
                title_id: title.clone(),
                mode: TraceMode::Fixed(q),
                truth,
                records,
            });
        }
    }

    let adaptive = |title: &str, tag: &str| -> Result<DatasetTrace, SynthError> {
        let seed = derive_seed(spec.seed, &[tag, title]);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["schedule"]));
        let schedule = random_schedule(spec, &mut rng);
        let mode = TraceMode::Adaptive(schedule);
        let (records, truth) = generate_trace(spec, title, &mode, seed)?;
        Ok(DatasetTrace { title_id: title.to_string(), mode, truth, records })
    };
    let mut test_adaptive_seen = Vec::new();
    for title in titles.iter().take(spec.adaptive_count) {
        test_adaptive_seen.push(adaptive(title, "test-adaptive-seen")?);
    }
    let mut test_adaptive_unseen = Vec::new();
    for i in 0..spec.adaptive_count {
        let title = format!("new-title-{i:03}");
        test_adaptive_unseen.push(adaptive(&title, "test-adaptive-unseen")?);
    }

    Ok(Dataset { spec: spec.clone(), train, test_fixed, test_adaptive_seen, test_adaptive_unseen })
}

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub title_id: String,
    pub mode: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality: Option<u8>,
    pub labels: Vec<u8>,
    pub segment_bits: Vec<f64>,
    pub completions: Vec<f64>,
    pub buffer_truth: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub spec: TraceSpec,
    pub train: Vec<ManifestEntry>,
    pub test_fixed: Vec<ManifestEntry>,
    pub test_adaptive_seen: Vec<ManifestEntry>,
    pub test_adaptive_unseen: Vec<ManifestEntry>,
}

fn write_section(
    dir: &Path,
    section: &str,
    traces: &[DatasetTrace],
    pcap: bool,
) -> Result<Vec<ManifestEntry>, SynthError> {
    let sub = dir.join(section);
    fs::create_dir_all(&sub)?;
    let mut entries = Vec::with_capacity(traces.len());
    for t in traces {
        let stem = match t.mode {
            TraceMode::Fixed(q) => format!("{}-q{}", t.title_id, q),
            TraceMode::Adaptive(_) => format!("{}-auto", t.title_id),
        };
        let rel = format!("{section}/{stem}.jsonl");
        let file = fs::File::create(dir.join(&rel))?;
        write_jsonl(std::io::BufWriter::new(file), &t.records)?;
        if pcap {
            crate::pcap::write_pcap_file(&sub.join(format!("{stem}.pcap")), &t.records)
                .map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
        }
        entries.push(ManifestEntry {
            path: rel,
            title_id: t.title_id.clone(),
            mode: match t.mode {
                TraceMode::Fixed(_) => "fixed".into(),
                TraceMode::Adaptive(_) => "adaptive".into(),
            },
            quality: t.fixed_label(),
            labels: t.truth.labels.clone(),
            segment_bits: t.truth.segment_bits.clone(),
            completions: t.truth.completions.clone(),
            buffer_truth: t.truth.buffer_truth.clone(),
        });
    }
    Ok(entries)
}

/// Write a dataset directory: one JSONL file per trace plus manifest.json
/// listing every trace with its ground truth.
pub fn write_dataset(ds: &Dataset, dir: &Path, pcap: bool) -> Result<(), SynthError> {
    fs::create_dir_all(dir)?;
    let manifest = Manifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        spec: ds.spec.clone(),
        train: write_section(dir, "train", &ds.train, pcap)?,
        test_fixed: write_section(dir, "test-fixed", &ds.test_fixed, pcap)?,
        test_adaptive_seen: write_section(dir, "test-adaptive-seen", &ds.test_adaptive_seen, pcap)?,
        test_adaptive_unseen: write_section(
            dir,
            "test-adaptive-unseen",
            &ds.test_adaptive_unseen,
            pcap,
        )?,
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;
    Ok(())
}

fn load_section(dir: &Path, entries: &[ManifestEntry]) -> Result<Vec<DatasetTrace>, SynthError> {
    let mut traces = Vec::with_capacity(entries.len());
    for e in entries {
        let path: PathBuf = dir.join(&e.path);
        let file = fs::File::open(&path)?;
        let records = read_jsonl(std::io::BufReader::new(file))?;
        let mode = match (e.mode.as_str(), e.quality) {
            ("fixed", Some(q)) => TraceMode::Fixed(q),
            ("adaptive", _) => TraceMode::Adaptive(e.labels.clone()),
            (m, _) => return Err(SynthError::BadManifest(format!("mode {m} without quality"))),
        };
        traces.push(DatasetTrace {
            title_id: e.title_id.clone(),
            mode,
            truth: GroundTruth {
                title_id: e.title_id.clone(),
                labels: e.labels.clone(),
                segment_bits: e.segment_bits.clone(),
                completions: e.completions.clone(),
                buffer_truth: e.buffer_truth.clone(),
            },
            records,
        })
    }
    Ok(traces)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, SynthError> {
    let text = fs::read_to_string(dir.join("manifest.json"))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| SynthError::BadManifest(e.to_string()))?;
    if manifest.schema_version != MANIFEST_SCHEMA_VERSION {
        return Err(SynthError::BadManifest(format!(
            "unknown manifest schema {}",
            manifest.schema_version
        )));
    }
    Ok(manifest)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset, SynthError> {
    let manifest = read_manifest(dir)?;
    Ok(Dataset {
        spec: manifest.spec.clone(),
        train: load_section(dir, &manifest.train)?,
        test_fixed: load_section(dir, &manifest.test_fixed)?,
        test_adaptive_seen: load_section(dir, &manifest.test_adaptive_seen)?,
        test_adaptive_unseen: load_section(dir, &manifest.test_adaptive_unseen)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec() -> TraceSpec {
        TraceSpec { n_titles: 2, segments_per_title: 6, adaptive_count: 1, ..TraceSpec::default() }
    }

    #[test]
    fn same_seed_same_bytes() {
        let spec = tiny_spec();
        let (a, _) = generate_trace(&spec, "t", &TraceMode::Fixed(2), 99).unwrap();
        let (b, _) = generate_trace(&spec, "t", &TraceMode::Fixed(2), 99).unwrap();
        assert_eq!(a, b);
        let (c, _) = generate_trace(&spec, "t", &TraceMode::Fixed(2), 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn fixed_mode_labels_are_constant() {
        let spec = tiny_spec();
        let (_, truth) = generate_trace(&spec, "t", &TraceMode::Fixed(3), 1).unwrap();
        assert_eq!(truth.labels, vec![3; 6]);
        assert_eq!(truth.segment_bits.len(), 6);
        assert_eq!(truth.completions.len(), 6);
    }

    #[test]
    fn adaptive_schedule_is_echoed() {
        let spec = tiny_spec();
        let schedule = vec![1, 1, 3, 3, 3, 3];
        let (_, truth) =
            generate_trace(&spec, "t", &TraceMode::Adaptive(schedule.clone()), 1).unwrap();
        assert_eq!(truth.labels, schedule);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = tiny_spec();
        spec.qualities[2].mean_bits = 1.0; // no longer increasing
        assert!(matches!(generate_trace(&spec, "t", &TraceMode::Fixed(1), 1),
            Err(SynthError::InvalidSpec(_))));
        let spec = tiny_spec();
        assert!(generate_trace(&spec, "t", &TraceMode::Fixed(9), 1).is_err());
        assert!(generate_trace(&spec, "t", &TraceMode::Adaptive(vec![1]), 1).is_err());
    }

    #[test]
    fn buffer_truth_drains_and_adds() {
        let truth = simulate_buffer_truth(&[1.0, 2.0, 3.0], 4.0);
        assert_eq!(truth, vec![4.0, 7.0, 10.0]);
    }

    #[test]
    fn dataset_shape_matches_split() {
        let ds = generate_dataset(&tiny_spec()).unwrap();
        assert_eq!(ds.train.len(), 6);
        assert_eq!(ds.test_fixed.len(), 6);
        assert_eq!(ds.test_adaptive_seen.len(), 1);
        assert_eq!(ds.test_adaptive_unseen.len(), 1);
    }

    #[test]
    fn dataset_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_dataset(&tiny_spec()).unwrap();
        write_dataset(&ds, dir.path(), false).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.train.len(), ds.train.len());
        assert_eq!(back.train[0].records, ds.train[0].records);
        assert_eq!(back.test_adaptive_seen[0].truth.labels, ds.test_adaptive_seen[0].truth.labels);
    }
}
