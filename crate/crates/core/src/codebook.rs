//! k-means++ codebook training and per-quality profiles.
//!
//! All training feature values are pooled and clustered in one dimension;
//! the sorted cluster centers form the symbol alphabet. For each quality
//! label the per-position averages of its training traces give an average
//! peak vector, its quantized representative string, and a scalar center
//! used for nearest-quality decisions.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_K: usize = 14;
pub const DEFAULT_RESTARTS: usize = 10;
pub const DEFAULT_MAX_ITERS: usize = 200;

#[derive(Debug, Error, PartialEq)]
pub enum CodebookError {
    #[error("empty input")]
    EmptyInput,
    #[error("k must be at least 1")]
    BadK,
    #[error("centers not strictly increasing")]
    UnsortedCenters,
    #[error("quality {0} has no training traces")]
    MissingQuality(u8),
    #[error("invalid training set: {0}")]
    InvalidTrainingSet(String),
}

/// Sorted, strictly increasing cluster centers.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    centers: Vec<f64>,
}

impl Codebook {
    pub fn new(centers: Vec<f64>) -> Result<Self, CodebookError> {
        if centers.is_empty() {
            return Err(CodebookError::EmptyInput);
        }
        if centers.windows(2).any(|w| !(w[0] < w[1])) || centers.iter().any(|c| !c.is_finite()) {
            return Err(CodebookError::UnsortedCenters);
        }
        Ok(Codebook { centers })
    }

    pub fn k(&self) -> usize {
        self.centers.len()
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn center(&self, symbol: usize) -> f64 {
        self.centers[symbol]
    }

    /// Nearest-center symbol; ties break toward the lower index.
    pub fn quantize(&self, value: f64) -> usize {
        let c = &self.centers;
        let i = c.partition_point(|&x| x < value);
        if i == 0 {
            0
        } else if i == c.len() {
            c.len() - 1
        } else if value - c[i - 1] <= c[i] - value {
            i - 1
        } else {
            i
        }
    }

    pub fn quantize_all(&self, values: &[f64]) -> Vec<usize> {
        values.iter().map(|&v| self.quantize(v)).collect()
    }
}

/// k-means++ seeding: first center uniform, each subsequent center drawn
/// with probability proportional to squared distance from the nearest
/// chosen center. Returns every distinct value when there are fewer than k.
pub fn kmeans_pp_init<R: Rng>(
    values: &[f64],
    k: usize,
    rng: &mut R,
) -> Result<Vec<f64>, CodebookError> {
    if values.is_empty() {
        return Err(CodebookError::EmptyInput);
    }
    if k == 0 {
        return Err(CodebookError::BadK);
    }
    let first = values[rng.random_range(0..values.len())];
    let mut centers = vec![first];
    let mut d2: Vec<f64> = values.iter().map(|v| (v - first) * (v - first)).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            break; // every value equals some center
        }
        let mut target = rng.random::<f64>() * total;
        let mut chosen = values.len() - 1;
        for (i, &w) in d2.iter().enumerate() {
            if w > 0.0 {
                target -= w;
                if target <= 0.0 {
                    chosen = i;
                    break;
                }
            }
        }
        let c = values[chosen];
        centers.push(c);
        for (i, &v) in values.iter().enumerate() {
            let d = (v - c) * (v - c);
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    Ok(centers)
}

fn wcss(values: &[f64], centers: &[f64]) -> f64 {
    values
        .iter()
        .map(|&v| {
            let d = centers.iter().map(|&c| (v - c).abs()).fold(f64::INFINITY, f64::min);
            d * d
        })
        .sum()
}

/// One-dimensional clusters are contiguous runs of the sorted values, so a
/// solution is k-1 cut positions. Hill-climb single-cut moves from the
/// Lloyd solution until no move lowers the within-cluster cost; each
/// accepted move strictly decreases it, so this only sharpens the Lloyd
/// result.
fn refine_boundaries(sorted: &[f64], centers: &mut Vec<f64>) {
    let k = centers.len();
    let n = sorted.len();
    if k < 2 || n < 2 {
        return;
    }
    // prefix sums for O(1) segment cost
    let mut s1 = vec![0.0f64; n + 1];
    let mut s2 = vec![0.0f64; n + 1];
    for (i, &v) in sorted.iter().enumerate() {
        s1[i + 1] = s1[i] + v;
        s2[i + 1] = s2[i] + v * v;
    }
    let cost = |a: usize, b: usize| -> f64 {
        let len = (b - a) as f64;
        let sum = s1[b] - s1[a];
        (s2[b] - s2[a]) - sum * sum / len
    };
    // initial cuts from the nearest-center assignment (monotone in 1-D)
    let mut cuts = Vec::with_capacity(k - 1);
    let mut c = 0usize;
    for j in 0..k - 1 {
        let boundary = (centers[j] + centers[j + 1]) / 2.0;
        while c < n && sorted[c] <= boundary {
            c += 1;
        }
        // keep segments non-empty and cuts increasing
        let lo = j + 1;
        let hi = n - (k - 1 - j);
        cuts.push(c.clamp(lo, hi));
        c = cuts[j];
    }
    let seg = |cuts: &[usize], j: usize| -> (usize, usize) {
        let a = if j == 0 { 0 } else { cuts[j - 1] };
        let b = if j == k - 1 { n } else { cuts[j] };
        (a, b)
    };
    let mut improved = true;
    while improved {
        improved = false;
        for j in 0..k - 1 {
            let (a, _) = seg(&cuts, j);
            let (_, b) = seg(&cuts, j + 1);
            let cur = cost(a, cuts[j]) + cost(cuts[j], b);
            for cand in [cuts[j].wrapping_sub(1), cuts[j] + 1] {
                if cand <= a || cand >= b {
                    continue;
                }
                let alt = cost(a, cand) + cost(cand, b);
                if alt < cur - 1e-12 * (1.0 + cur.abs()) {
                    cuts[j] = cand;
                    improved = true;
                    break;
                }
            }
        }
    }
    centers.clear();
    for j in 0..k {
        let (a, b) = seg(&cuts, j);
        centers.push((s1[b] - s1[a]) / (b - a) as f64);
    }
}

/// Lloyd iterations in one dimension from a k-means++ seeding, followed by
/// a cut-position refinement over the sorted values. Empty clusters are
/// reseeded to the point farthest from its assigned center. Within-cluster
/// sum of squares is non-increasing across iterations (asserted under test
/// builds). Returns sorted centers, exact duplicates merged.
pub fn kmeans_fit_wcss<R: Rng>(
    values: &[f64],
    k: usize,
    rng: &mut R,
    max_iters: usize,
    tol: f64,
) -> Result<(Codebook, f64), CodebookError> {
    let mut centers = kmeans_pp_init(values, k, rng)?;
    centers.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = values.len();
    let mut assign = vec![0usize; n];
    let mut prev_wcss = f64::INFINITY;
    for _ in 0..max_iters {
        // assignment, nearest center with ties toward the lower index
        let mut iter_wcss = 0.0;
        for (i, &v) in values.iter().enumerate() {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (j, &c) in centers.iter().enumerate() {
                let d = (v - c).abs();
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            assign[i] = best;
            iter_wcss += best_d * best_d;
        }
        debug_assert!(
            iter_wcss <= prev_wcss * (1.0 + 1e-12) + 1e-12,
            "wcss increased: {prev_wcss} -> {iter_wcss}"
        );
        prev_wcss = iter_wcss;

        // update
        let kk = centers.len();
        let mut sums = vec![0.0f64; kk];
        let mut counts = vec![0usize; kk];
        for (i, &v) in values.iter().enumerate() {
            sums[assign[i]] += v;
            counts[assign[i]] += 1;
        }
        let mut new_centers = centers.clone();
        for j in 0..kk {
            if counts[j] > 0 {
                new_centers[j] = sums[j] / counts[j] as f64;
            }
        }
        // reseed empties to the farthest point in a non-singleton cluster
        for j in 0..kk {
            if counts[j] > 0 {
                continue;
            }
            let mut far_i = None;
            let mut far_d = -1.0;
            for (i, &v) in values.iter().enumerate() {
                if counts[assign[i]] <= 1 {
                    continue;
                }
                let d = (v - centers[assign[i]]).abs();
                if d > far_d {
                    far_d = d;
                    far_i = Some(i);
                }
            }
            if let Some(i) = far_i {
                new_centers[j] = values[i];
                counts[assign[i]] -= 1;
                counts[j] += 1;
                assign[i] = j;
            }
        }
        new_centers.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        let movement = centers
            .iter()
            .zip(&new_centers)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        centers = new_centers;
        if movement < tol {
            break;
        }
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    refine_boundaries(&sorted, &mut centers);
    debug_assert!({
        let w = wcss(values, &centers);
        w <= prev_wcss * (1.0 + 1e-9) + 1e-9
    });
    centers.dedup();
    let final_wcss = wcss(values, &centers);
    Ok((Codebook::new(centers)?, final_wcss))
}

pub fn kmeans_fit<R: Rng>(
    values: &[f64],
    k: usize,
    rng: &mut R,
    max_iters: usize,
    tol: f64,
) -> Result<Codebook, CodebookError> {
    kmeans_fit_wcss(values, k, rng, max_iters, tol).map(|(cb, _)| cb)
}

/// Scale-relative tolerance used by the trainer.
pub fn relative_tol(values: &[f64]) -> f64 {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max > min {
        1e-6 * (max - min)
    } else {
        0.0
    }
}

/// Best of `restarts` seeded k-means++ runs by final WCSS.
pub fn train_codebook<R: Rng>(
    values: &[f64],
    k: usize,
    restarts: usize,
    rng: &mut R,
) -> Result<Codebook, CodebookError> {
    if values.is_empty() {
        return Err(CodebookError::EmptyInput);
    }
    let tol = relative_tol(values);
    let mut best: Option<(Codebook, f64)> = None;
    for _ in 0..restarts.max(1) {
        let (cb, w) = kmeans_fit_wcss(values, k, rng, DEFAULT_MAX_ITERS, tol)?;
        if best.as_ref().map_or(true, |(_, bw)| w < *bw) {
            best = Some((cb, w));
        }
    }
    Ok(best.expect("at least one restart").0)
}

/// One fixed-quality training download: ordered feature values of a single
/// stream.
#[derive(Debug, Clone)]
pub struct TrainingTrace {
    pub title_id: String,
    pub label: u8,
    pub values: Vec<f64>,
}

/// Labeled fixed-quality training data: every title downloaded once per
/// quality representation, label y in 1..=m.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub m: u8,
    /// Display names indexed by label-1 (e.g. 360P/480P/720P).
    pub names: Vec<String>,
    pub entries: Vec<TrainingTrace>,
}

impl TrainingSet {
    pub fn new(
        m: u8,
        names: Vec<String>,
        entries: Vec<TrainingTrace>,
    ) -> Result<Self, CodebookError> {
        let ts = TrainingSet { m, names, entries };
        ts.validate()?;
        Ok(ts)
    }

    pub fn validate(&self) -> Result<(), CodebookError> {
        if self.m == 0 || self.entries.is_empty() {
            return Err(CodebookError::InvalidTrainingSet("no entries".into()));
        }
        for e in &self.entries {
            if e.label == 0 || e.label > self.m {
                return Err(CodebookError::InvalidTrainingSet(format!(
                    "label {} out of range 1..={}",
                    e.label, self.m
                )));
            }
            if e.values.is_empty() {
                return Err(CodebookError::InvalidTrainingSet(format!(
                    "trace {} ({}) has no features",
                    e.title_id, e.label
                )));
            }
        }
        // every title carries all m labels
        let mut titles: Vec<&str> = self.entries.iter().map(|e| e.title_id.as_str()).collect();
        titles.sort();
        titles.dedup();
        for t in titles {
            for label in 1..=self.m {
                if !self.entries.iter().any(|e| e.title_id == t && e.label == label) {
                    return Err(CodebookError::InvalidTrainingSet(format!(
                        "title {t} missing quality {label}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn all_values(&self) -> Vec<f64> {
        self.entries.iter().flat_map(|e| e.values.iter().copied()).collect()
    }

    pub fn label_name(&self, label: u8) -> String {
        self.names
            .get(label as usize - 1)
            .cloned()
            .unwrap_or_else(|| format!("Q{label}"))
    }
}

/// Per-quality model: averaged peak vector, its representative string, and
/// the scalar center used for per-feature decisions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityProfile {
    pub label: u8,
    pub name: String,
    pub avg_peaks: Vec<f64>,
    pub rep_string: Vec<usize>,
    pub scalar_center: f64,
}

/// For each quality: average the i-th peak value over that quality's
/// traces, truncating at the shortest trace, then quantize element-wise.
pub fn build_profiles(
    ts: &TrainingSet,
    cb: &Codebook,
) -> Result<Vec<QualityProfile>, CodebookError> {
    let mut profiles = Vec::with_capacity(ts.m as usize);
    for label in 1..=ts.m {
        let traces: Vec<&TrainingTrace> =
            ts.entries.iter().filter(|e| e.label == label).collect();
        if traces.is_empty() {
            return Err(CodebookError::MissingQuality(label));
        }
        let min_len = traces.iter().map(|t| t.values.len()).min().expect("non-empty");
        let avg_peaks: Vec<f64> = (0..min_len)
            .map(|i| traces.iter().map(|t| t.values[i]).sum::<f64>() / traces.len() as f64)
            .collect();
        let rep_string = cb.quantize_all(&avg_peaks);
        let scalar_center = avg_peaks.iter().sum::<f64>() / avg_peaks.len() as f64;
        profiles.push(QualityProfile {
            label,
            name: ts.label_name(label),
            avg_peaks,
            rep_string,
            scalar_center,
        });
    }
    Ok(profiles)
}
