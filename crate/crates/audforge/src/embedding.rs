//! Embedding vectors and the cascade of embedding-based sample filters:
//! audio outlier, text outlier, audio-text alignment, and minimum duration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A finite real vector. Construction rejects empty and non-finite input so
/// downstream math can assume both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("embedding must not be empty".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("embedding contains non-finite values".into()));
        }
        Ok(EmbeddingVector { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Cosine similarity in [-1, 1]. Errors on dimension mismatch and on zero
/// vectors, which have no direction to compare.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch { left: a.dim(), right: b.dim() });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Cosine distance, `1 - cosine_similarity`, in [0, 2].
pub fn cosine_distance(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    Ok(1.0 - cosine_similarity(a, b)?)
}

/// Arithmetic mean of a non-empty set of same-dimension vectors.
pub fn mean_embedding(set: &[EmbeddingVector]) -> Result<EmbeddingVector> {
    let first = set.first().ok_or(Error::EmptyEmbeddingSet)?;
    let dim = first.dim();
    let mut acc = vec![0.0; dim];
    for v in set {
        if v.dim() != dim {
            return Err(Error::DimMismatch { left: dim, right: v.dim() });
        }
        for (a, x) in acc.iter_mut().zip(v.values()) {
            *a += x;
        }
    }
    let n = set.len() as f64;
    for a in &mut acc {
        *a /= n;
    }
    EmbeddingVector::new(acc)
}

pub const DEFAULT_OUTLIER_DISTANCE: f64 = 0.9;
pub const DEFAULT_ALIGNMENT_SIMILARITY: f64 = 0.5;
pub const DEFAULT_MIN_DURATION_S: f64 = 3.0;

/// Thresholds for the filter cascade. Defaults match the released pipeline
/// settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterThresholds {
    /// Samples strictly beyond this cosine distance from the modality mean
    /// are dropped.
    pub outlier_distance: f64,
    /// Samples strictly below this audio-text cosine similarity are dropped;
    /// the boundary value is kept.
    pub alignment_similarity: f64,
    /// Samples strictly shorter than this are dropped; the boundary value is
    /// kept.
    pub min_duration_s: f64,
}

impl Default for FilterThresholds {
    fn default() -> Self {
        FilterThresholds {
            outlier_distance: DEFAULT_OUTLIER_DISTANCE,
            alignment_similarity: DEFAULT_ALIGNMENT_SIMILARITY,
            min_duration_s: DEFAULT_MIN_DURATION_S,
        }
    }
}

impl FilterThresholds {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=2.0).contains(&self.outlier_distance) {
            return Err(Error::Config(format!(
                "outlier_distance must be in [0, 2], got {}",
                self.outlier_distance
            )));
        }
        if !(-1.0..=1.0).contains(&self.alignment_similarity) {
            return Err(Error::Config(format!(
                "alignment_similarity must be in [-1, 1], got {}",
                self.alignment_similarity
            )));
        }
        if !(self.min_duration_s.is_finite() && self.min_duration_s >= 0.0) {
            return Err(Error::Config(format!(
                "min_duration_s must be non-negative, got {}",
                self.min_duration_s
            )));
        }
        Ok(())
    }
}

/// True when the sample passes the alignment gate (similarity at or above
/// the threshold).
pub fn alignment_filter(a: &EmbeddingVector, b: &EmbeddingVector, threshold: f64) -> Result<bool> {
    Ok(cosine_similarity(a, b)? >= threshold)
}

/// True when the sample passes the duration gate (at or above the minimum).
pub fn duration_filter(duration_s: f64, min_duration_s: f64) -> bool {
    duration_s >= min_duration_s
}

/// Embedding inputs for one sample entering the filter cascade.
#[derive(Debug, Clone)]
pub struct FilterCandidate {
    /// Embedding of the segment audio.
    pub audio: EmbeddingVector,
    /// Embedding of the generated audio caption.
    pub text: EmbeddingVector,
    /// Embedding of the original closed-caption text.
    pub closed_caption: EmbeddingVector,
    pub duration_s: f64,
}

/// Why one sample was dropped. At most one reason per sample: the cascade
/// stops at the first failing filter, in the order audio outlier, text
/// outlier, alignment, duration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "filter", rename_all = "kebab-case")]
pub enum DropReason {
    OutlierAudio { distance: f64 },
    OutlierText { distance: f64 },
    Alignment { similarity: f64 },
    Duration { seconds: f64 },
    /// The embedding math itself failed at the named stage (for example a
    /// zero vector); counted under that stage's bucket.
    Invalid { stage: String, message: String },
}

impl DropReason {
    /// Stable short code, also used as the manifest failure reason suffix.
    pub fn code(&self) -> &str {
        match self {
            DropReason::OutlierAudio { .. } => "outlier-audio",
            DropReason::OutlierText { .. } => "outlier-text",
            DropReason::Alignment { .. } => "alignment",
            DropReason::Duration { .. } => "duration",
            DropReason::Invalid { stage, .. } => stage,
        }
    }
}

/// Aggregate counts for one filter pass.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub input_count: usize,
    pub dropped_outlier_audio: usize,
    pub dropped_outlier_text: usize,
    pub dropped_alignment: usize,
    pub dropped_duration: usize,
    pub kept: usize,
}

impl FilterReport {
    pub fn record(&mut self, reason: &DropReason) {
        match reason.code() {
            "outlier-audio" => self.dropped_outlier_audio += 1,
            "outlier-text" => self.dropped_outlier_text += 1,
            "alignment" => self.dropped_alignment += 1,
            "duration" => self.dropped_duration += 1,
            other => panic!("unknown drop bucket {other}"),
        }
    }

    /// Every input sample is either kept or counted in exactly one drop
    /// bucket.
    pub fn reconciles(&self) -> bool {
        self.kept
            + self.dropped_outlier_audio
            + self.dropped_outlier_text
            + self.dropped_alignment
            + self.dropped_duration
            == self.input_count
    }
}

/// Kept indices, per-sample drop reasons, and the aggregate report for one
/// filter pass over `candidates`.
#[derive(Debug, Clone)]
pub struct FilterOutcome {
    pub kept: Vec<usize>,
    pub drops: Vec<(usize, DropReason)>,
    pub report: FilterReport,
}

/// Centroids the outlier filters measure against, computed over the full
/// input set in a single pass before any sample is dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterMeans {
    pub audio: EmbeddingVector,
    pub text: EmbeddingVector,
}

pub fn filter_means(candidates: &[FilterCandidate]) -> Result<FilterMeans> {
    let audio: Vec<EmbeddingVector> = candidates.iter().map(|c| c.audio.clone()).collect();
    let text: Vec<EmbeddingVector> = candidates.iter().map(|c| c.text.clone()).collect();
    Ok(FilterMeans {
        audio: mean_embedding(&audio)?,
        text: mean_embedding(&text)?,
    })
}

fn classify_candidate(
    candidate: &FilterCandidate,
    means: &FilterMeans,
    thresholds: &FilterThresholds,
) -> Option<DropReason> {
    match cosine_distance(&candidate.audio, &means.audio) {
        Ok(d) if d > thresholds.outlier_distance => {
            return Some(DropReason::OutlierAudio { distance: d })
        }
        Ok(_) => {}
        Err(e) => {
            return Some(DropReason::Invalid {
                stage: "outlier-audio".into(),
                message: e.to_string(),
            })
        }
    }
    match cosine_distance(&candidate.text, &means.text) {
        Ok(d) if d > thresholds.outlier_distance => {
            return Some(DropReason::OutlierText { distance: d })
        }
        Ok(_) => {}
        Err(e) => {
            return Some(DropReason::Invalid {
                stage: "outlier-text".into(),
                message: e.to_string(),
            })
        }
    }
    match cosine_similarity(&candidate.text, &candidate.closed_caption) {
        Ok(s) if s < thresholds.alignment_similarity => {
            return Some(DropReason::Alignment { similarity: s })
        }
        Ok(_) => {}
        Err(e) => {
            return Some(DropReason::Invalid {
                stage: "alignment".into(),
                message: e.to_string(),
            })
        }
    }
    if !duration_filter(candidate.duration_s, thresholds.min_duration_s) {
        return Some(DropReason::Duration { seconds: candidate.duration_s });
    }
    None
}

/// Runs the full cascade over `candidates` with centroids computed from the
/// same set. Deterministic: output order follows input order.
pub fn run_filters(
    candidates: &[FilterCandidate],
    thresholds: &FilterThresholds,
) -> Result<FilterOutcome> {
    let means = filter_means(candidates)?;
    run_filters_with_means(candidates, &means, thresholds)
}

/// Same cascade against externally provided centroids, for resumable runs
/// where the centroids of the full input set were persisted up front.
pub fn run_filters_with_means(
    candidates: &[FilterCandidate],
    means: &FilterMeans,
    thresholds: &FilterThresholds,
) -> Result<FilterOutcome> {
    thresholds.validate()?;
    let mut report = FilterReport {
        input_count: candidates.len(),
        ..FilterReport::default()
    };
    let mut kept = Vec::new();
    let mut drops = Vec::new();
    for (idx, candidate) in candidates.iter().enumerate() {
        match classify_candidate(candidate, means, thresholds) {
            Some(reason) => {
                report.record(&reason);
                drops.push((idx, reason));
            }
            None => {
                report.kept += 1;
                kept.push(idx);
            }
        }
    }
    debug_assert!(report.reconciles());
    Ok(FilterOutcome { kept, drops, report })
}
