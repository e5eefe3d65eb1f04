//! Real-time quality-representation classification for encrypted HTTP
//! adaptive video streams.
//!
//! The pipeline ingests packet records (pcap or JSONL), tracks five-tuple
//! connections with a retransmission filter, gates video flows by TLS SNI,
//! segments each flow's download into silence-delimited traffic bursts, and
//! classifies every burst's bit-per-peak feature against a k-means++
//! codebook with per-quality profiles. Companion modules provide baseline
//! classifiers, a playout-buffer estimator, an evaluation harness, and a
//! synthetic trace generator with ground truth.

pub mod baselines;
pub mod buffer;
pub mod classifier;
pub mod codebook;
pub mod config;
pub mod dpi;
pub mod eval;
pub mod features;
pub mod flow;
pub mod model;
pub mod packet;
pub mod pcap;
pub mod pipeline;
pub mod synth;
pub mod train;
