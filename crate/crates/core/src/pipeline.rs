//! The packet-to-feature engine: connection matching, SNI gating, and
//! streaming burst extraction, driven by a virtual clock.
//!
//! Finalizations are stamped at their deadline (peak end plus the silence
//! gap), exactly when a real-time timer would fire, so every feature is
//! available within one silence gap of the underlying peak's last packet.
//! Packets of one flow must arrive in capture order; distinct flows are
//! independent.

use std::collections::BTreeMap;
use std::net::IpAddr;

use crate::config::AppConfig;
use crate::dpi::{self, HelloReassembler, HelloVerdict};
use crate::features::{FeatureEvent, Peak, SegmentFeature, StreamingExtractor};
use crate::flow::{ConnectionTable, Direction, DpiStatus, FlowId, FlowState};
use crate::packet::{PacketRecord, Transport};

/// Pipeline output, in emission order.
#[derive(Debug, Clone, PartialEq)]
pub enum PipelineEvent {
    /// A video-flow burst above the audio threshold finished; carries the
    /// session identity for buffer accounting. Positional drops do not
    /// apply here: every downloaded segment completes.
    PeakComplete { peak: Peak, host: String, client: IpAddr, emitted_at: f64 },
    Feature { feature: SegmentFeature, peak_end: f64, emitted_at: f64 },
    Retract { flow: FlowId, peak_index: usize, emitted_at: f64 },
}

impl PipelineEvent {
    pub fn emitted_at(&self) -> f64 {
        match self {
            PipelineEvent::PeakComplete { emitted_at, .. }
            | PipelineEvent::Feature { emitted_at, .. }
            | PipelineEvent::Retract { emitted_at, .. } => *emitted_at,
        }
    }
}

struct VideoFlow {
    extractor: StreamingExtractor,
    host: String,
    client: IpAddr,
}

pub struct Engine {
    cfg: AppConfig,
    table: ConnectionTable,
    video: BTreeMap<FlowId, VideoFlow>,
    hellos: BTreeMap<FlowId, HelloReassembler>,
    scratch: Vec<FeatureEvent>,
    event_log: Option<BTreeMap<FlowId, Vec<f64>>>,
}

impl Engine {
    pub fn new(cfg: &AppConfig) -> Self {
        Engine {
            cfg: cfg.clone(),
            table: ConnectionTable::new(),
            video: BTreeMap::new(),
            hellos: BTreeMap::new(),
            scratch: Vec::new(),
            event_log: None,
        }
    }

    /// Like [`Engine::new`] but records each video flow's accepted-byte
    /// event timestamps for time-difference features.
    pub fn with_event_log(cfg: &AppConfig) -> Self {
        let mut e = Engine::new(cfg);
        e.event_log = Some(BTreeMap::new());
        e
    }

    pub fn take_event_log(&mut self) -> BTreeMap<FlowId, Vec<f64>> {
        self.event_log.take().unwrap_or_default()
    }

    fn lift(scratch: &mut Vec<FeatureEvent>, host: &str, client: IpAddr, out: &mut Vec<PipelineEvent>) {
        for ev in scratch.drain(..) {
            out.push(match ev {
                FeatureEvent::PeakComplete { peak, emitted_at } => PipelineEvent::PeakComplete {
                    peak,
                    host: host.to_string(),
                    client,
                    emitted_at,
                },
                FeatureEvent::Feature { feature, peak_end, emitted_at } => {
                    PipelineEvent::Feature { feature, peak_end, emitted_at }
                }
                FeatureEvent::Retract { flow, peak_index, emitted_at } => {
                    PipelineEvent::Retract { flow, peak_index, emitted_at }
                }
            });
        }
    }

    /// Fire every finalization deadline due at `now`, in deadline order
    /// across flows.
    fn fire_deadlines(&mut self, now: f64, out: &mut Vec<PipelineEvent>) {
        loop {
            let next = self
                .video
                .iter()
                .filter(|(_, v)| v.extractor.due(now))
                .filter_map(|(&id, v)| v.extractor.deadline().map(|d| (d, id)))
                .min_by(|a, b| a.partial_cmp(b).expect("finite deadlines"));
            let Some((_, id)) = next else { break };
            let v = self.video.get_mut(&id).expect("video flow");
            // A below-threshold burst finalizes silently; the open peak is
            // consumed either way, so the loop always progresses.
            v.extractor.poll(now, &mut self.scratch);
            Self::lift(&mut self.scratch, &v.host, v.client, out);
        }
    }

    /// Expire idle flows, flushing their extractors.
    fn expire(&mut self, now: f64, out: &mut Vec<PipelineEvent>) {
        for st in self.table.expire_flows(now, self.cfg.flow.idle_timeout_s) {
            self.hellos.remove(&st.id);
            if let Some(mut v) = self.video.remove(&st.id) {
                v.extractor.flush(now, &mut self.scratch);
                Self::lift(&mut self.scratch, &v.host, v.client, out);
            }
        }
    }

    pub fn on_packet(&mut self, pkt: &PacketRecord, out: &mut Vec<PipelineEvent>) {
        self.fire_deadlines(pkt.ts, out);
        self.expire(pkt.ts, out);

        let (id, _is_new) = self.table.match_connection(pkt);
        let st = self.table.get_mut(id).expect("matched flow");
        let dir = st.direction_of(&pkt.tuple);
        let new_bytes = st.accept_payload(pkt);
        let pending = st.dpi_status == DpiStatus::Pending;

        if pending
            && pkt.tuple.transport == Transport::Tcp
            && dir == Direction::Upstream
            && pkt.payload_len > 0
        {
            self.inspect_hello(id, pkt);
        }

        if new_bytes > 0 && dir == Direction::Downstream {
            if let Some(v) = self.video.get_mut(&id) {
                if let Some(log) = &mut self.event_log {
                    log.entry(id).or_default().push(pkt.ts);
                }
                v.extractor.on_event(pkt.ts, new_bytes, &mut self.scratch);
                Self::lift(&mut self.scratch, &v.host, v.client, out);
            }
        }
    }

    fn inspect_hello(&mut self, id: FlowId, pkt: &PacketRecord) {
        let bytes = match &pkt.payload {
            Some(b) => b.as_slice(),
            // Opaque payload we cannot inspect: no SNI will ever be found.
            None => {
                self.set_status(id, DpiStatus::NonVideo, None);
                return;
            }
        };
        let verdict = self.hellos.entry(id).or_default().push(bytes);
        match verdict {
            HelloVerdict::NeedMore => {}
            HelloVerdict::Hostname(host) => {
                self.hellos.remove(&id);
                if dpi::is_video_host(&host, &self.cfg.dpi) {
                    self.set_status(id, DpiStatus::Video, Some(host.clone()));
                    let client = self.table.get(id).expect("flow").client_addr();
                    self.video.insert(
                        id,
                        VideoFlow {
                            extractor: StreamingExtractor::new(id, self.cfg.features.clone()),
                            host,
                            client,
                        },
                    );
                } else {
                    self.set_status(id, DpiStatus::NonVideo, Some(host));
                }
            }
            HelloVerdict::NotHello | HelloVerdict::NoSni | HelloVerdict::Malformed => {
                self.hellos.remove(&id);
                self.set_status(id, DpiStatus::NonVideo, None);
            }
        }
    }

    fn set_status(&mut self, id: FlowId, status: DpiStatus, host: Option<String>) {
        if let Some(st) = self.table.get_mut(id) {
            st.dpi_status = status;
            if host.is_some() {
                st.hostname = host;
            }
        }
    }

    /// End of input: flush every remaining flow.
    pub fn finish(&mut self, out: &mut Vec<PipelineEvent>) {
        for st in self.table.drain() {
            self.hellos.remove(&st.id);
            if let Some(mut v) = self.video.remove(&st.id) {
                v.extractor.flush(st.last_activity, &mut self.scratch);
                Self::lift(&mut self.scratch, &v.host, v.client, out);
            }
        }
    }

    pub fn flow_state(&self, id: FlowId) -> Option<&FlowState> {
        self.table.get(id)
    }
}

/// Run the engine over a whole capture.
pub fn run(cfg: &AppConfig, records: &[PacketRecord]) -> Vec<PipelineEvent> {
    let mut engine = Engine::new(cfg);
    let mut out = Vec::new();
    for pkt in records {
        engine.on_packet(pkt, &mut out);
    }
    engine.finish(&mut out);
    out
}

/// Everything extracted from one video flow of a capture.
#[derive(Debug, Clone, Default)]
pub struct FlowExtraction {
    pub host: String,
    pub client: Option<IpAddr>,
    /// Effective features: retractions already applied.
    pub features: Vec<SegmentFeature>,
    /// Peak end time per feature, aligned with `features`.
    pub feature_ends: Vec<f64>,
    /// Completion instants (peak ends) of bursts above the audio threshold,
    /// positional drops not applied.
    pub completions: Vec<f64>,
    /// Accepted-byte event timestamps, the raw material of time-difference
    /// features.
    pub event_times: Vec<f64>,
}

/// Batch extraction of per-flow features plus the event timeline needed by
/// the baselines and the buffer estimator. Only gated video flows appear.
pub fn extract_trace(cfg: &AppConfig, records: &[PacketRecord]) -> BTreeMap<FlowId, FlowExtraction> {
    let mut engine = Engine::with_event_log(cfg);
    let mut events = Vec::new();
    for pkt in records {
        engine.on_packet(pkt, &mut events);
    }
    engine.finish(&mut events);
    let log = engine.take_event_log();

    let mut flows: BTreeMap<FlowId, FlowExtraction> = BTreeMap::new();
    for (id, times) in log {
        flows.entry(id).or_default().event_times = times;
    }
    for ev in events {
        match ev {
            PipelineEvent::PeakComplete { peak, host, client, .. } => {
                let fx = flows.entry(peak.flow).or_default();
                fx.host = host;
                fx.client = Some(client);
                fx.completions.push(peak.end);
            }
            PipelineEvent::Feature { feature, peak_end, .. } => {
                let fx = flows.entry(feature.flow).or_default();
                fx.features.push(feature);
                fx.feature_ends.push(peak_end);
            }
            PipelineEvent::Retract { flow, peak_index, .. } => {
                if let Some(fx) = flows.get_mut(&flow) {
                    if let Some(pos) = fx.features.iter().position(|f| f.peak_index == peak_index)
                    {
                        fx.features.remove(pos);
                        fx.feature_ends.remove(pos);
                    }
                }
            }
        }
    }
    flows
}

/// The flow carrying the download: most features, then most events, then
/// the earliest flow id.
pub fn dominant_flow(flows: &BTreeMap<FlowId, FlowExtraction>) -> Option<FlowId> {
    flows
        .iter()
        .max_by_key(|(id, fx)| {
            (fx.features.len(), fx.event_times.len(), std::cmp::Reverse(**id))
        })
        .map(|(&id, _)| id)
}
