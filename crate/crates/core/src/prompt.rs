//! Question, answer and instruction templates.

use alloc::format;
use alloc::string::String;

use thiserror::Error;

use crate::span::check_fps;

/// Sentence prepended to every query so the model knows what the overlaid
/// numbers mean.
pub const INSTRUCTION_PREFIX: &str = "The red numbers on each frame represent the frame number.";

const HIGHLIGHT_REQUEST: &str = "Find every segment of the video that is relevant to the query and \
assign each one a saliency score on a scale from 1 to 5, where 5 is the most relevant. \
Answer with one line per segment in the form \"From x to y, saliency s\".";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Task {
    #[default]
    Moment,
    Highlight,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TemplateError {
    #[error("query is empty")]
    EmptyQuery,
    #[error("start frame {start} exceeds end frame {end}")]
    InvertedSpan { start: u64, end: u64 },
    #[error("annotation ({start_s} s, {end_s} s) is not a valid interval")]
    InvalidSeconds { start_s: f64, end_s: f64 },
    #[error("annotation starts at frame {start} but the video has {n_frames} frames")]
    StartsAfterEnd { start: u64, n_frames: usize },
    #[error(transparent)]
    Span(#[from] crate::span::SpanError),
}

/// Trims whitespace and trailing periods so the query reads naturally inside
/// the question template.
pub fn normalize_query(query: &str) -> &str {
    query.trim().trim_end_matches('.').trim_end()
}

pub fn question(query: &str) -> Result<String, TemplateError> {
    let q = normalize_query(query);
    if q.is_empty() {
        return Err(TemplateError::EmptyQuery);
    }
    Ok(format!("During which frames can we see {q}?"))
}

pub fn format_answer(start_frame: u64, end_frame: u64) -> String {
    format!("From {start_frame} to {end_frame}")
}

/// The question/answer pair for one grounded query.
pub fn build_qa(query: &str, start_frame: u64, end_frame: u64) -> Result<(String, String), TemplateError> {
    if start_frame > end_frame {
        return Err(TemplateError::InvertedSpan {
            start: start_frame,
            end: end_frame,
        });
    }
    Ok((question(query)?, format_answer(start_frame, end_frame)))
}

/// Maps an annotation in seconds onto frame indices of a video sampled at
/// `fps` with `n_frames` frames: `start = floor(s * fps)`,
/// `end = min(floor(e * fps), n_frames - 1)`.
///
/// Products within 1e-9 below an integer count as that integer.
pub fn seconds_to_frames(start_s: f64, end_s: f64, fps: f64, n_frames: usize) -> Result<(u64, u64), TemplateError> {
    check_fps(fps)?;
    if !(start_s.is_finite() && end_s.is_finite()) || start_s < 0.0 || start_s > end_s {
        return Err(TemplateError::InvalidSeconds { start_s, end_s });
    }
    let to_frame = |s: f64| libm::floor(s * fps + 1e-9) as u64;
    let start = to_frame(start_s);
    if n_frames == 0 || start > (n_frames - 1) as u64 {
        return Err(TemplateError::StartsAfterEnd { start, n_frames });
    }
    let end = to_frame(end_s).min((n_frames - 1) as u64);
    Ok((start, end))
}

/// Full instruction text sent with the frames.
pub fn build_prompt(task: Task, query: &str) -> Result<String, TemplateError> {
    match task {
        Task::Moment => Ok(format!("{INSTRUCTION_PREFIX} {}", question(query)?)),
        Task::Highlight => {
            let q = normalize_query(query);
            if q.is_empty() {
                return Err(TemplateError::EmptyQuery);
            }
            Ok(format!("{INSTRUCTION_PREFIX} Query: {q}. {HIGHLIGHT_REQUEST}"))
        }
    }
}

/// One line of the answer format the highlight prompt asks for.
pub fn format_saliency_answer(start: u64, end: u64, score: u8) -> String {
    format!("From {start} to {end}, saliency {score}")
}
