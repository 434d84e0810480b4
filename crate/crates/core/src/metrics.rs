//! Moment-retrieval and highlight-detection metrics.
//!
//! Moment retrieval uses temporal IoU: R@m is the fraction of queries whose
//! single prediction reaches IoU `m`, mIoU the mean IoU. Absent predictions
//! score IoU 0 and are never dropped.
//!
//! Highlight detection ranks a query's clips by predicted saliency
//! (descending, ties by earlier `clip_start`, unpredicted clips last in
//! `clip_start` order) and marks a clip relevant when its ground-truth
//! saliency reaches a threshold. mAP averages the per-query average precision
//! and HIT@1 counts queries whose top-ranked clip is relevant. A query with no
//! predicted clip at all scores 0 on both.

use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use thiserror::Error;

use crate::parse::Validity;
use crate::span::{SpanError, TemporalSpan};

/// Default relevance threshold on ground-truth saliency.
pub const DEFAULT_RELEVANCE_THRESHOLD: f64 = 3.0;
/// Default highlight clip length in seconds.
pub const DEFAULT_CLIP_SECONDS: f64 = 2.0;
/// IoU thresholds reported for moment retrieval.
pub const RECALL_THRESHOLDS: [f64; 3] = [0.3, 0.5, 0.7];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("no records to score")]
    Empty,
    #[error("IoU threshold must lie in (0, 1], got {0}")]
    Threshold(f64),
    #[error(transparent)]
    Span(#[from] SpanError),
    #[error("highlight record {0:?} has no clips")]
    NoClips(String),
    #[error("predicted saliency {value} for record {id:?} outside [1, 5]")]
    Saliency { id: String, value: f64 },
    #[error("clip start {clip_start} in record {id:?} is not a non-negative multiple of {clip_len} s")]
    ClipGrid {
        id: String,
        clip_start: f64,
        clip_len: f64,
    },
}

/// Intersection over union of two closed spans in the same unit.
///
/// Two identical zero-length spans have IoU 1; any other pair with an empty
/// union has IoU 0.
pub fn iou(a: &TemporalSpan, b: &TemporalSpan) -> Result<f64, MetricError> {
    if a.unit() != b.unit() {
        return Err(SpanError::UnitMismatch(a.unit(), b.unit()).into());
    }
    let inter = (a.end().min(b.end()) - a.start().max(b.start())).max(0.0);
    let union = a.len() + b.len() - inter;
    if union <= 0.0 {
        return Ok(if a == b { 1.0 } else { 0.0 });
    }
    Ok((inter / union).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MomentRecord {
    pub id: String,
    pub query: String,
    pub gt: TemporalSpan,
    pub pred: Option<TemporalSpan>,
    pub validity: Validity,
}

impl MomentRecord {
    /// IoU of the prediction against ground truth; 0 without a prediction.
    pub fn iou(&self) -> Result<f64, MetricError> {
        match (&self.pred, self.validity) {
            (Some(pred), Validity::Valid | Validity::Clamped) => iou(pred, &self.gt),
            _ => Ok(0.0),
        }
    }
}

fn check_threshold(m: f64) -> Result<(), MetricError> {
    if m > 0.0 && m <= 1.0 {
        Ok(())
    } else {
        Err(MetricError::Threshold(m))
    }
}

fn ious(records: &[MomentRecord]) -> Result<Vec<f64>, MetricError> {
    if records.is_empty() {
        return Err(MetricError::Empty);
    }
    records.iter().map(MomentRecord::iou).collect()
}

/// Fraction of records whose IoU is at least `m`.
pub fn recall_at(records: &[MomentRecord], m: f64) -> Result<f64, MetricError> {
    check_threshold(m)?;
    let values = ious(records)?;
    let hits = values.iter().filter(|&&v| v >= m).count();
    Ok(hits as f64 / values.len() as f64)
}

pub fn mean_iou(records: &[MomentRecord]) -> Result<f64, MetricError> {
    let values = ious(records)?;
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentScores {
    pub recall: [f64; 3],
    pub mean_iou: f64,
    pub n_records: usize,
}

/// R@{0.3, 0.5, 0.7} and mIoU in one pass.
pub fn moment_scores(records: &[MomentRecord]) -> Result<MomentScores, MetricError> {
    let values = ious(records)?;
    let n = values.len() as f64;
    let recall = RECALL_THRESHOLDS.map(|m| values.iter().filter(|&&v| v >= m).count() as f64 / n);
    Ok(MomentScores {
        recall,
        mean_iou: values.iter().sum::<f64>() / n,
        n_records: values.len(),
    })
}

/// Mean of precision@k over the ranks `k` holding a relevant item; 0 when
/// nothing is relevant.
pub fn average_precision(ranked_relevance: &[bool]) -> f64 {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, _) in ranked_relevance.iter().enumerate().filter(|(_, &rel)| rel) {
        hits += 1;
        sum += hits as f64 / (k + 1) as f64;
    }
    if hits == 0 {
        0.0
    } else {
        sum / hits as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Clip {
    pub clip_start: f64,
    pub gt_saliency: f64,
    pub pred_saliency: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HighlightRecord {
    pub id: String,
    pub query: String,
    pub clips: Vec<Clip>,
}

impl HighlightRecord {
    /// Checks the clip list is nonempty and predictions lie in `[1, 5]`.
    pub fn new(id: String, query: String, clips: Vec<Clip>) -> Result<Self, MetricError> {
        let record = Self { id, query, clips };
        record.validate()?;
        Ok(record)
    }

    pub fn validate(&self) -> Result<(), MetricError> {
        if self.clips.is_empty() {
            return Err(MetricError::NoClips(self.id.clone()));
        }
        for clip in &self.clips {
            if let Some(p) = clip.pred_saliency {
                if !(1.0..=5.0).contains(&p) {
                    return Err(MetricError::Saliency {
                        id: self.id.clone(),
                        value: p,
                    });
                }
            }
        }
        Ok(())
    }

    /// Checks every `clip_start` is a multiple of `clip_len` seconds.
    pub fn check_grid(&self, clip_len: f64) -> Result<(), MetricError> {
        for clip in &self.clips {
            let k = clip.clip_start / clip_len;
            if !(clip.clip_start >= 0.0 && (k - libm::round(k)).abs() <= 1e-6) {
                return Err(MetricError::ClipGrid {
                    id: self.id.clone(),
                    clip_start: clip.clip_start,
                    clip_len,
                });
            }
        }
        Ok(())
    }

    pub fn has_prediction(&self) -> bool {
        self.clips.iter().any(|c| c.pred_saliency.is_some())
    }

    /// Clip indices in ranking order.
    pub fn ranking(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.clips.len()).collect();
        order.sort_by(|&i, &j| {
            let (a, b) = (&self.clips[i], &self.clips[j]);
            let by_pred = match (a.pred_saliency, b.pred_saliency) {
                (Some(x), Some(y)) => y.total_cmp(&x),
                (Some(_), None) => Ordering::Less,
                (None, Some(_)) => Ordering::Greater,
                (None, None) => Ordering::Equal,
            };
            by_pred
                .then(a.clip_start.total_cmp(&b.clip_start))
                .then(i.cmp(&j))
        });
        order
    }

    /// Relevance flags in ranking order.
    pub fn ranked_relevance(&self, threshold: f64) -> Vec<bool> {
        self.ranking()
            .into_iter()
            .map(|i| self.clips[i].gt_saliency >= threshold)
            .collect()
    }

    pub fn average_precision(&self, threshold: f64) -> f64 {
        if !self.has_prediction() {
            return 0.0;
        }
        average_precision(&self.ranked_relevance(threshold))
    }

    pub fn hit_at_1(&self, threshold: f64) -> bool {
        self.has_prediction()
            && self
                .ranking()
                .first()
                .is_some_and(|&i| self.clips[i].gt_saliency >= threshold)
    }
}

fn check_records(records: &[HighlightRecord]) -> Result<(), MetricError> {
    if records.is_empty() {
        return Err(MetricError::Empty);
    }
    records.iter().try_for_each(HighlightRecord::validate)
}

/// Mean per-query average precision with relevance `gt_saliency >= threshold`.
pub fn map_highlight(records: &[HighlightRecord], relevance_threshold: f64) -> Result<f64, MetricError> {
    check_records(records)?;
    let total: f64 = records
        .iter()
        .map(|r| r.average_precision(relevance_threshold))
        .sum();
    Ok(total / records.len() as f64)
}

/// Fraction of queries whose top-ranked clip is relevant.
pub fn hit_at_1(records: &[HighlightRecord], relevance_threshold: f64) -> Result<f64, MetricError> {
    check_records(records)?;
    let hits = records
        .iter()
        .filter(|r| r.hit_at_1(relevance_threshold))
        .count();
    Ok(hits as f64 / records.len() as f64)
}
