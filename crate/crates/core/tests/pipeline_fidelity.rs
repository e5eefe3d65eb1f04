//! End-to-end fidelity of the packet pipeline against generator ground
//! truth: segmentation recovers exactly the constructed segments, the
//! retransmission filter hides injected duplicates, and pcap ingestion
//! agrees with the JSONL path.

use peakclass_core::config::AppConfig;
use peakclass_core::pcap;
use peakclass_core::pipeline::{self, dominant_flow};
use peakclass_core::synth::{generate_trace, TraceMode, TraceSpec};

fn spec() -> TraceSpec {
    TraceSpec { segments_per_title: 8, ..TraceSpec::default() }
}

#[test]
fn recovers_every_segment_with_drops_disabled() {
    let spec = spec();
    let (records, truth) = generate_trace(&spec, "t0", &TraceMode::Fixed(2), 42).unwrap();
    let mut cfg = AppConfig::default();
    cfg.features.drop_first = false;
    cfg.features.drop_last = false;
    let flows = pipeline::extract_trace(&cfg, &records);
    let dom = dominant_flow(&flows).unwrap();
    let fx = &flows[&dom];
    assert_eq!(fx.features.len(), spec.segments_per_title);
    for (f, bits) in fx.features.iter().zip(&truth.segment_bits) {
        assert_eq!(f.value, *bits, "feature equals constructed segment bits exactly");
    }
    // completion instants match the generator's last-packet times
    assert_eq!(fx.completions, truth.completions);
}

#[test]
fn positional_drops_remove_head_and_tail() {
    let spec = spec();
    let (records, truth) = generate_trace(&spec, "t0", &TraceMode::Fixed(3), 43).unwrap();
    let cfg = AppConfig::default();
    let flows = pipeline::extract_trace(&cfg, &records);
    let dom = dominant_flow(&flows).unwrap();
    let fx = &flows[&dom];
    assert_eq!(fx.features.len(), spec.segments_per_title - 2);
    for f in &fx.features {
        assert_eq!(f.value, truth.segment_bits[f.peak_index]);
        assert!(f.peak_index >= 1 && f.peak_index <= spec.segments_per_title - 2);
    }
    // the audio companion flow is gated as video but yields no features
    let audio_flows: Vec<_> = flows.keys().filter(|id| **id != dom).collect();
    assert!(!audio_flows.is_empty(), "audio flow should be gated by its SNI");
    for id in audio_flows {
        assert!(flows[id].features.is_empty());
        assert!(flows[id].completions.is_empty());
    }
}

#[test]
fn injected_duplicates_change_nothing() {
    let base = spec();
    let noisy = TraceSpec { retrans_rate: 0.25, ..base.clone() };
    let (clean_records, _) = generate_trace(&base, "t0", &TraceMode::Fixed(1), 44).unwrap();
    let (noisy_records, _) = generate_trace(&noisy, "t0", &TraceMode::Fixed(1), 44).unwrap();
    assert!(noisy_records.len() > clean_records.len(), "duplicates were injected");

    let cfg = AppConfig::default();
    let clean = pipeline::extract_trace(&cfg, &clean_records);
    let noisy = pipeline::extract_trace(&cfg, &noisy_records);
    let a = &clean[&dominant_flow(&clean).unwrap()];
    let b = &noisy[&dominant_flow(&noisy).unwrap()];
    assert_eq!(a.features, b.features);
}

#[test]
fn pcap_ingestion_matches_jsonl_path() {
    let spec = spec();
    let (records, _) = generate_trace(&spec, "t0", &TraceMode::Fixed(2), 45).unwrap();
    let pcap_bytes = pcap::write_pcap_bytes(&records);
    let from_pcap = pcap::read_pcap_bytes(&pcap_bytes).unwrap();
    assert_eq!(from_pcap.len(), records.len());

    let cfg = AppConfig::default();
    let via_jsonl = pipeline::extract_trace(&cfg, &records);
    let via_pcap = pipeline::extract_trace(&cfg, &from_pcap);
    let a = &via_jsonl[&dominant_flow(&via_jsonl).unwrap()];
    let b = &via_pcap[&dominant_flow(&via_pcap).unwrap()];
    assert_eq!(a.features, b.features);
    assert_eq!(a.completions, b.completions);
}

#[test]
fn audio_peaks_sit_below_threshold_and_video_above() {
    let spec = spec();
    let cfg = AppConfig::default();
    for seed in [1u64, 2, 3] {
        let (records, _) = generate_trace(&spec, "t", &TraceMode::Fixed(1), seed).unwrap();
        let mut no_drop = cfg.clone();
        no_drop.features.drop_first = false;
        no_drop.features.drop_last = false;
        no_drop.features.audio_threshold_bits = 0.0;
        let flows = pipeline::extract_trace(&no_drop, &records);
        let dom = dominant_flow(&flows).unwrap();
        for (id, fx) in &flows {
            for f in &fx.features {
                if *id == dom {
                    assert!(f.value > cfg.features.audio_threshold_bits);
                } else {
                    assert!(f.value < cfg.features.audio_threshold_bits);
                }
            }
        }
    }
}
