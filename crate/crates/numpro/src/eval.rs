//! Scoring of model outputs against ground truth files.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use numpro_core::metrics::{
    self, Clip, HighlightRecord, MetricError, MomentRecord, DEFAULT_CLIP_SECONDS, RECALL_THRESHOLDS,
};
use numpro_core::parse::{interval_distribution, parse_moment, parse_saliency, IntervalShare, SaliencyEntry, SaliencyOutcome, Validity};
use numpro_core::TemporalSpan;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jsonl::{self, JsonlError, Line};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("{path}:{line}: {message}")]
    Row { path: PathBuf, line: usize, message: String },
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Distribution(#[from] numpro_core::parse::DistributionError),
}

fn row_err(path: &Path, line: usize, message: impl ToString) -> EvalError {
    EvalError::Row {
        path: path.to_path_buf(),
        line,
        message: message.to_string(),
    }
}

/// A model answer as written by `infer`. `raw_text` is absent for jobs that
/// failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub id: String,
    #[serde(default)]
    pub raw_text: Option<String>,
    #[serde(default)]
    pub n_frames: Option<usize>,
    #[serde(default)]
    pub fps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pred_saliency: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct MomentGtRow {
    pub id: String,
    #[serde(default)]
    pub query: String,
    pub start_s: f64,
    pub end_s: f64,
}

#[derive(Debug, Clone, Deserialize)]
pub struct GtClip {
    pub clip_start: f64,
    pub gt_saliency: f64,
}

#[derive(Debug, Clone, Deserialize)]
pub struct HighlightGtRow {
    pub id: String,
    #[serde(default)]
    pub query: String,
    pub clips: Vec<GtClip>,
}

/// The JSON report shared by both evaluations; metrics of the other task are
/// null.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(rename = "R@0.3")]
    pub r_at_03: Option<f64>,
    #[serde(rename = "R@0.5")]
    pub r_at_05: Option<f64>,
    #[serde(rename = "R@0.7")]
    pub r_at_07: Option<f64>,
    #[serde(rename = "mIoU")]
    pub miou: Option<f64>,
    #[serde(rename = "mAP")]
    pub map: Option<f64>,
    #[serde(rename = "HIT@1")]
    pub hit_at_1: Option<f64>,
    pub n_records: usize,
    /// Malformed and out-of-range answers plus records with no answer.
    pub n_parse_failures: usize,
}

/// Per-class tallies behind `n_parse_failures`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ParseTally {
    pub valid: usize,
    pub clamped: usize,
    pub out_of_range: usize,
    pub malformed: usize,
    pub missing: usize,
    /// Predictions whose id matches no ground-truth row; not scored.
    pub unmatched: usize,
}

impl ParseTally {
    fn add(&mut self, v: Validity) {
        match v {
            Validity::Valid => self.valid += 1,
            Validity::Clamped => self.clamped += 1,
            Validity::OutOfRange => self.out_of_range += 1,
            Validity::Malformed => self.malformed += 1,
        }
    }

    pub fn failures(&self) -> usize {
        self.out_of_range + self.malformed + self.missing
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation<R> {
    pub report: MetricReport,
    pub tally: ParseTally,
    pub records: Vec<R>,
}

fn fmt_metric(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{:.2}", x * 100.0))
}

impl MetricReport {
    /// Fixed-width table; metrics are shown as percentages.
    pub fn table(&self, tally: &ParseTally) -> String {
        let mut out = String::new();
        let rows = [
            ("R@0.3", fmt_metric(self.r_at_03)),
            ("R@0.5", fmt_metric(self.r_at_05)),
            ("R@0.7", fmt_metric(self.r_at_07)),
            ("mIoU", fmt_metric(self.miou)),
            ("mAP", fmt_metric(self.map)),
            ("HIT@1", fmt_metric(self.hit_at_1)),
            ("records", self.n_records.to_string()),
            ("parse failures", self.n_parse_failures.to_string()),
        ];
        for (k, v) in rows.iter().filter(|(_, v)| v != "-") {
            let _ = writeln!(out, "{k:<16}{v:>10}");
        }
        let _ = writeln!(
            out,
            "{:<16}{:>10}",
            "answers",
            format!(
                "valid {} / clamped {} / out of range {} / malformed {} / missing {} / unmatched {}",
                tally.valid, tally.clamped, tally.out_of_range, tally.malformed, tally.missing, tally.unmatched
            )
        );
        out
    }
}

fn index_predictions(path: &Path) -> Result<HashMap<String, Line<PredictionRow>>, EvalError> {
    let mut by_id = HashMap::new();
    for line in jsonl::read::<PredictionRow>(path)? {
        let (number, id) = (line.number, line.value.id.clone());
        if by_id.insert(id.clone(), line).is_some() {
            return Err(row_err(path, number, format!("duplicate prediction id {id:?}")));
        }
    }
    Ok(by_id)
}

fn check_unique<'a>(path: &Path, ids: impl Iterator<Item = (usize, &'a str)>) -> Result<(), EvalError> {
    let mut seen = HashMap::new();
    for (line, id) in ids {
        if let Some(first) = seen.insert(id, line) {
            return Err(row_err(path, line, format!("id {id:?} already used on line {first}")));
        }
    }
    Ok(())
}

/// Scores moment predictions. Answers are frame numbers and are converted to
/// seconds with the row's `fps`, else `default_fps`. A row without
/// `n_frames` is not clamped.
pub fn eval_moment(preds: &Path, gt: &Path, default_fps: f64) -> Result<Evaluation<MomentRecord>, EvalError> {
    let gt_rows = jsonl::read::<MomentGtRow>(gt)?;
    check_unique(gt, gt_rows.iter().map(|l| (l.number, l.value.id.as_str())))?;
    let mut by_id = index_predictions(preds)?;
    let mut tally = ParseTally::default();
    let mut records = Vec::with_capacity(gt_rows.len());
    for line in &gt_rows {
        let row = &line.value;
        let gt_span = TemporalSpan::seconds(row.start_s, row.end_s).map_err(|e| row_err(gt, line.number, e))?;
        let (pred, validity) = match by_id.remove(&row.id) {
            Some(Line { value: p, number }) => match &p.raw_text {
                Some(text) => {
                    let fps = p.fps.unwrap_or(default_fps);
                    if !(fps.is_finite() && fps > 0.0) {
                        return Err(row_err(preds, number, format!("fps {fps} must be positive")));
                    }
                    let outcome = parse_moment(text, p.n_frames.unwrap_or(usize::MAX), fps);
                    tally.add(outcome.validity);
                    let pred = outcome
                        .span
                        .map(|s| s.to_seconds(fps))
                        .transpose()
                        .map_err(|e| row_err(preds, number, e))?;
                    (pred, outcome.validity)
                }
                None => {
                    tally.missing += 1;
                    (None, Validity::Malformed)
                }
            },
            None => {
                tally.missing += 1;
                (None, Validity::Malformed)
            }
        };
        records.push(MomentRecord {
            id: row.id.clone(),
            query: row.query.clone(),
            gt: gt_span,
            pred,
            validity,
        });
    }
    tally.unmatched = by_id.len();
    let scores = metrics::moment_scores(&records)?;
    debug_assert_eq!(RECALL_THRESHOLDS, [0.3, 0.5, 0.7]);
    let report = MetricReport {
        r_at_03: Some(scores.recall[0]),
        r_at_05: Some(scores.recall[1]),
        r_at_07: Some(scores.recall[2]),
        miou: Some(scores.mean_iou),
        map: None,
        hit_at_1: None,
        n_records: scores.n_records,
        n_parse_failures: tally.failures(),
    };
    Ok(Evaluation { report, tally, records })
}

/// Reads a highlight answer. Without `fps` the spans are clip indices; with
/// it they are frame numbers, mapped onto clips of `clip_len` seconds.
fn saliency_from_text(text: &str, clips: usize, fps: Option<f64>, clip_len: f64) -> SaliencyOutcome {
    let Some(fps) = fps else {
        return parse_saliency(text, clips);
    };
    let frames = (clips as f64 * clip_len * fps).ceil().max(1.0) as usize;
    let mut outcome = parse_saliency(text, frames);
    let to_clip = |f: usize| ((f as f64 / fps / clip_len).floor() as usize).min(clips - 1);
    outcome.entries = outcome
        .entries
        .iter()
        .map(|e| SaliencyEntry {
            start: to_clip(e.start),
            end: to_clip(e.end),
            score: e.score,
        })
        .collect();
    outcome
}

/// Scores highlight predictions given either as `pred_saliency` (one score
/// per clip) or as a `raw_text` answer.
pub fn eval_highlight(
    preds: &Path,
    gt: &Path,
    threshold: f64,
    clip_len: f64,
) -> Result<Evaluation<HighlightRecord>, EvalError> {
    let gt_rows = jsonl::read::<HighlightGtRow>(gt)?;
    check_unique(gt, gt_rows.iter().map(|l| (l.number, l.value.id.as_str())))?;
    let mut by_id = index_predictions(preds)?;
    let mut tally = ParseTally::default();
    let mut records = Vec::with_capacity(gt_rows.len());
    for line in &gt_rows {
        let row = &line.value;
        let n = row.clips.len();
        let scores: Vec<Option<f64>> = match by_id.remove(&row.id) {
            Some(Line { value: p, number }) => match (&p.pred_saliency, &p.raw_text) {
                (Some(list), _) => {
                    if list.len() != n {
                        return Err(row_err(preds, number, format!("{} scores for {n} clips", list.len())));
                    }
                    tally.add(Validity::Valid);
                    list.iter().copied().map(Some).collect()
                }
                (None, Some(text)) if n > 0 => {
                    let outcome = saliency_from_text(text, n, p.fps, clip_len);
                    tally.add(outcome.validity);
                    outcome.clip_scores(n)
                }
                _ => {
                    tally.missing += 1;
                    vec![None; n]
                }
            },
            None => {
                tally.missing += 1;
                vec![None; n]
            }
        };
        let clips = row
            .clips
            .iter()
            .zip(scores)
            .map(|(c, p)| Clip {
                clip_start: c.clip_start,
                gt_saliency: c.gt_saliency,
                pred_saliency: p,
            })
            .collect();
        let record = HighlightRecord::new(row.id.clone(), row.query.clone(), clips)
            .map_err(|e| row_err(gt, line.number, e))?;
        record.check_grid(clip_len).map_err(|e| row_err(gt, line.number, e))?;
        records.push(record);
    }
    tally.unmatched = by_id.len();
    let report = MetricReport {
        r_at_03: None,
        r_at_05: None,
        r_at_07: None,
        miou: None,
        map: Some(metrics::map_highlight(&records, threshold)?),
        hit_at_1: Some(metrics::hit_at_1(&records, threshold)?),
        n_records: records.len(),
        n_parse_failures: tally.failures(),
    };
    Ok(Evaluation { report, tally, records })
}

pub const DEFAULT_CLIP_LEN: f64 = DEFAULT_CLIP_SECONDS;

#[derive(Debug, Clone)]
pub struct Distribution {
    pub top: Vec<IntervalShare>,
    pub total: usize,
    pub malformed: usize,
    pub bins: BTreeMap<(i64, i64), usize>,
}

/// Most common predicted intervals among `raw_text` answers. Rows without an
/// answer count as malformed, so shares are over every row.
pub fn analyze_distribution(preds: &Path, k: usize) -> Result<Distribution, EvalError> {
    let outcomes: Vec<_> = jsonl::read::<PredictionRow>(preds)?
        .iter()
        .map(|l| {
            let p = &l.value;
            let text = p.raw_text.as_deref().unwrap_or("");
            parse_moment(text, p.n_frames.unwrap_or(usize::MAX), p.fps.unwrap_or(1.0))
        })
        .collect();
    let (hist, top) = interval_distribution(&outcomes, k)?;
    Ok(Distribution {
        top,
        total: hist.total,
        malformed: hist.malformed,
        bins: hist.bins,
    })
}

pub fn write_distribution_csv(path: &Path, top: &[IntervalShare]) -> csv::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for s in top {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}
