//! Comparison classifiers: nearest average bit rate (naive) and an LZ78
//! probability-tree sequence classifier adapted from traffic
//! fingerprinting, runnable over bit-rate or time-difference symbols.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codebook::TrainingSet;

#[derive(Debug, Error, PartialEq)]
pub enum BaselineError {
    #[error("empty model")]
    EmptyModel,
    #[error("quality {0} has no training traces")]
    MissingQuality(u8),
    #[error("need at least two events for time differences")]
    InsufficientData,
}

/// Per-quality average bit rate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NaiveModel {
    /// (label, average bits) sorted by label.
    pub averages: Vec<(u8, f64)>,
}

/// Flat mean of every training feature value per quality.
pub fn train_naive(ts: &TrainingSet) -> Result<NaiveModel, BaselineError> {
    let mut averages = Vec::with_capacity(ts.m as usize);
    for label in 1..=ts.m {
        let values: Vec<f64> = ts
            .entries
            .iter()
            .filter(|e| e.label == label)
            .flat_map(|e| e.values.iter().copied())
            .collect();
        if values.is_empty() {
            return Err(BaselineError::MissingQuality(label));
        }
        averages.push((label, values.iter().sum::<f64>() / values.len() as f64));
    }
    Ok(NaiveModel { averages })
}

/// Closest average quality bit rate; ties toward the lower label.
pub fn naive_classify(value: f64, nm: &NaiveModel) -> Result<u8, BaselineError> {
    if nm.averages.is_empty() {
        return Err(BaselineError::EmptyModel);
    }
    let mut best = (f64::INFINITY, 0u8);
    for &(label, avg) in &nm.averages {
        let d = (value - avg).abs();
        if d < best.0 {
            best = (d, label);
        }
    }
    Ok(best.1)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct Lz78Node {
    /// symbol -> node index; BTreeMap keeps serialization deterministic.
    children: BTreeMap<usize, usize>,
    /// Times the edge into this node was traversed.
    count: u64,
    /// Sum of child counts, maintained for O(1) probabilities.
    children_total: u64,
}

impl Lz78Node {
    fn new() -> Self {
        Lz78Node { children: BTreeMap::new(), count: 0, children_total: 0 }
    }
}

/// LZ78 dictionary tree with visit counts; doubles as an add-one-smoothed
/// sequence probability model over the shared codebook alphabet.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Lz78Tree {
    alphabet_size: usize,
    nodes: Vec<Lz78Node>,
    phrase_count: usize,
}

impl Lz78Tree {
    /// Standard incremental LZ78 parse: walk from the root matching
    /// symbols, add one node on leaving the tree and restart. A trailing
    /// partial phrase increments counts but adds no node.
    pub fn parse(seq: &[usize], alphabet_size: usize) -> Self {
        let mut tree =
            Lz78Tree { alphabet_size, nodes: vec![Lz78Node::new()], phrase_count: 0 };
        let mut cur = 0usize;
        for &sym in seq {
            match tree.nodes[cur].children.get(&sym).copied() {
                Some(child) => {
                    tree.nodes[cur].children_total += 1;
                    tree.nodes[child].count += 1;
                    cur = child;
                }
                None => {
                    let idx = tree.nodes.len();
                    let mut node = Lz78Node::new();
                    node.count = 1;
                    tree.nodes.push(node);
                    tree.nodes[cur].children.insert(sym, idx);
                    tree.nodes[cur].children_total += 1;
                    tree.phrase_count += 1;
                    cur = 0;
                }
            }
        }
        tree
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn phrase_count(&self) -> usize {
        self.phrase_count
    }

    /// Walk `seq` through the tree summing add-one-smoothed log
    /// probabilities: P(next = s) = (count(s) + 1) / (total + alphabet).
    /// Falling off the tree charges the smoothed escape mass and restarts
    /// at the root.
    pub fn log_likelihood(&self, seq: &[usize]) -> f64 {
        let a = self.alphabet_size as f64;
        let mut cur = 0usize;
        let mut ll = 0.0;
        for &sym in seq {
            let node = &self.nodes[cur];
            let total = node.children_total as f64;
            match node.children.get(&sym).copied() {
                Some(child) => {
                    ll += ((self.nodes[child].count as f64 + 1.0) / (total + a)).ln();
                    cur = child;
                }
                None => {
                    ll += (1.0 / (total + a)).ln();
                    cur = 0;
                }
            }
        }
        ll
    }
}

/// One tree per training trace, classification against the
/// maximum-likelihood tree.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Lz78Model {
    pub alphabet_size: usize,
    /// (label, trees of that label's training traces), sorted by label.
    pub trees: Vec<(u8, Vec<Lz78Tree>)>,
}

pub fn train_lz78(
    sequences: &[(u8, Vec<usize>)],
    m: u8,
    alphabet_size: usize,
) -> Result<Lz78Model, BaselineError> {
    let mut trees: Vec<(u8, Vec<Lz78Tree>)> = (1..=m).map(|l| (l, Vec::new())).collect();
    for (label, seq) in sequences {
        let slot = trees
            .iter_mut()
            .find(|(l, _)| l == label)
            .ok_or(BaselineError::EmptyModel)?;
        slot.1.push(Lz78Tree::parse(seq, alphabet_size));
    }
    for (label, ts) in &trees {
        if ts.is_empty() {
            return Err(BaselineError::MissingQuality(*label));
        }
    }
    Ok(Lz78Model { alphabet_size, trees })
}

/// Label of the tree scoring `seq` highest; ties toward the lower label.
pub fn lz78_classify(seq: &[usize], model: &Lz78Model) -> Result<u8, BaselineError> {
    let mut best: Option<(f64, u8)> = None;
    for (label, trees) in &model.trees {
        for tree in trees {
            let ll = tree.log_likelihood(seq);
            if best.map_or(true, |(b, _)| ll > b) {
                best = Some((ll, *label));
            }
        }
    }
    best.map(|(_, label)| label).ok_or(BaselineError::EmptyModel)
}

/// Inter-event time deltas, the raw material of the time-difference
/// feature.
pub fn time_deltas(timestamps: &[f64]) -> Result<Vec<f64>, BaselineError> {
    if timestamps.len() < 2 {
        return Err(BaselineError::InsufficientData);
    }
    Ok(timestamps.windows(2).map(|w| w[1] - w[0]).collect())
}
