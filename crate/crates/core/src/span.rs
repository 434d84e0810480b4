use core::fmt;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum TimeUnit {
    Seconds,
    Frames,
}

impl fmt::Display for TimeUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimeUnit::Seconds => f.write_str("seconds"),
            TimeUnit::Frames => f.write_str("frames"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum SpanError {
    #[error("span endpoints must be finite and non-negative, got ({start}, {end})")]
    Negative { start: f64, end: f64 },
    #[error("span start {start} exceeds end {end}")]
    Inverted { start: f64, end: f64 },
    #[error("frame rate must be positive and finite, got {0}")]
    InvalidFps(f64),
    #[error("span units differ: {0} vs {1}")]
    UnitMismatch(TimeUnit, TimeUnit),
}

/// Closed interval `[start, end]` in seconds or frames.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "RawSpan"))]
pub struct TemporalSpan {
    start: f64,
    end: f64,
    unit: TimeUnit,
}

#[cfg(feature = "serde")]
#[derive(serde::Deserialize)]
struct RawSpan {
    start: f64,
    end: f64,
    unit: TimeUnit,
}

#[cfg(feature = "serde")]
impl TryFrom<RawSpan> for TemporalSpan {
    type Error = SpanError;

    fn try_from(raw: RawSpan) -> Result<Self, Self::Error> {
        TemporalSpan::new(raw.start, raw.end, raw.unit)
    }
}

impl TemporalSpan {
    pub fn new(start: f64, end: f64, unit: TimeUnit) -> Result<Self, SpanError> {
        if !(start.is_finite() && end.is_finite()) || start < 0.0 || end < 0.0 {
            return Err(SpanError::Negative { start, end });
        }
        if start > end {
            return Err(SpanError::Inverted { start, end });
        }
        Ok(Self { start, end, unit })
    }

    pub fn seconds(start: f64, end: f64) -> Result<Self, SpanError> {
        Self::new(start, end, TimeUnit::Seconds)
    }

    pub fn frames(start: f64, end: f64) -> Result<Self, SpanError> {
        Self::new(start, end, TimeUnit::Frames)
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    pub fn unit(&self) -> TimeUnit {
        self.unit
    }

    pub fn len(&self) -> f64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    /// Converts a frame span to seconds by dividing both endpoints by `fps`.
    /// Second spans are returned unchanged.
    pub fn to_seconds(self, fps: f64) -> Result<Self, SpanError> {
        check_fps(fps)?;
        match self.unit {
            TimeUnit::Seconds => Ok(self),
            TimeUnit::Frames => Ok(Self {
                start: self.start / fps,
                end: self.end / fps,
                unit: TimeUnit::Seconds,
            }),
        }
    }

    /// Converts a second span to frames by multiplying with `fps` (no rounding).
    pub fn to_frames(self, fps: f64) -> Result<Self, SpanError> {
        check_fps(fps)?;
        match self.unit {
            TimeUnit::Frames => Ok(self),
            TimeUnit::Seconds => Ok(Self {
                start: self.start * fps,
                end: self.end * fps,
                unit: TimeUnit::Frames,
            }),
        }
    }
}

/// Converts a frame-unit span to seconds.
pub fn frames_to_seconds(span: TemporalSpan, fps: f64) -> Result<TemporalSpan, SpanError> {
    span.to_seconds(fps)
}

pub(crate) fn check_fps(fps: f64) -> Result<(), SpanError> {
    if fps.is_finite() && fps > 0.0 {
        Ok(())
    } else {
        Err(SpanError::InvalidFps(fps))
    }
}
