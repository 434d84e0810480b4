//! Numbered-frame overlays.
//!
//! A frame is first normalized to a square canvas, then its number (or
//! `MM:SS` timestamp) is drawn with the embedded [`font`] and alpha-composited
//! in a corner or at the center. Rendering uses integer compositing only:
//!
//! ```text
//! out = (src * (255 - a) + color * a + 127) / 255
//! ```
//!
//! where `a` is the 4x4-supersampled glyph coverage. Only pixels inside the
//! [`GlyphBox`] can change.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use thiserror::Error;

pub mod font;
mod frame;
mod sampling;

pub use frame::{normalize_frame, FrameImage, DEFAULT_CANVAS_SIZE};
pub use sampling::{plan_indices, SamplingMode, SamplingPlan, SamplingRatio};

pub const MIN_FONT_SIZE: u32 = 8;
pub const MAX_FONT_SIZE: u32 = 160;
/// Rendered values must stay below this bound.
pub const MAX_VALUE: u64 = 10_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OverlayError {
    #[error("invalid image {width}x{height} with {len} bytes")]
    InvalidImage { width: u32, height: u32, len: usize },
    #[error("font size {0} outside [{MIN_FONT_SIZE}, {MAX_FONT_SIZE}]")]
    FontSize(u32),
    #[error("value {0} exceeds the layout bound {MAX_VALUE}")]
    ValueTooLarge(u64),
    #[error("label box {text_width}x{text_height} does not fit a {canvas_width}x{canvas_height} frame")]
    Layout {
        text_width: u32,
        text_height: u32,
        canvas_width: u32,
        canvas_height: u32,
    },
    #[error("sampling ratio must lie in (0, 1], got {0}")]
    InvalidRatio(f64),
    #[error("frame rate must be positive, got {0}")]
    InvalidFps(f64),
    #[error("frame {index}: {source}")]
    Frame {
        index: usize,
        #[source]
        source: Box<OverlayError>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Rgb {
    pub r: u8,
    pub g: u8,
    pub b: u8,
}

impl Rgb {
    pub const RED: Rgb = Rgb::new(255, 0, 0);
    pub const GREEN: Rgb = Rgb::new(0, 255, 0);
    pub const BLUE: Rgb = Rgb::new(0, 0, 255);
    pub const BLACK: Rgb = Rgb::new(0, 0, 0);
    pub const WHITE: Rgb = Rgb::new(255, 255, 255);
    pub const YELLOW: Rgb = Rgb::new(255, 255, 0);

    pub const fn new(r: u8, g: u8, b: u8) -> Self {
        Self { r, g, b }
    }

    pub fn name(&self) -> Option<&'static str> {
        Some(match *self {
            Rgb::RED => "red",
            Rgb::GREEN => "green",
            Rgb::BLUE => "blue",
            Rgb::BLACK => "black",
            Rgb::WHITE => "white",
            Rgb::YELLOW => "yellow",
            _ => return None,
        })
    }
}

/// Prints the color name when it has one, `#rrggbb` otherwise.
impl fmt::Display for Rgb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.name() {
            Some(name) => f.write_str(name),
            None => write!(f, "#{:02x}{:02x}{:02x}", self.r, self.g, self.b),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unrecognized {kind} {value:?}")]
pub struct ParseEnumError {
    kind: &'static str,
    value: String,
}

/// Accepts a color name, `#rrggbb`, or `r,g,b`.
impl FromStr for Rgb {
    type Err = ParseEnumError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseEnumError {
            kind: "color",
            value: s.into(),
        };
        let t = s.trim().to_ascii_lowercase();
        let named = match t.as_str() {
            "red" => Some(Rgb::RED),
            "green" => Some(Rgb::GREEN),
            "blue" => Some(Rgb::BLUE),
            "black" => Some(Rgb::BLACK),
            "white" => Some(Rgb::WHITE),
            "yellow" => Some(Rgb::YELLOW),
            _ => None,
        };
        if let Some(c) = named {
            return Ok(c);
        }
        if let Some(hex) = t.strip_prefix('#') {
            if hex.len() != 6 || !hex.is_ascii() {
                return Err(err());
            }
            let ch = |i: usize| u8::from_str_radix(&hex[i..i + 2], 16).map_err(|_| err());
            return Ok(Rgb::new(ch(0)?, ch(2)?, ch(4)?));
        }
        let parts: Vec<&str> = t.split(',').map(str::trim).collect();
        if let [r, g, b] = parts[..] {
            let ch = |v: &str| v.parse::<u8>().map_err(|_| err());
            return Ok(Rgb::new(ch(r)?, ch(g)?, ch(b)?));
        }
        Err(err())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Position {
    TopLeft,
    TopRight,
    BottomLeft,
    #[default]
    BottomRight,
    Center,
}

impl Position {
    pub const ALL: [Position; 5] = [
        Position::TopLeft,
        Position::TopRight,
        Position::BottomLeft,
        Position::BottomRight,
        Position::Center,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Position::TopLeft => "top_left",
            Position::TopRight => "top_right",
            Position::BottomLeft => "bottom_left",
            Position::BottomRight => "bottom_right",
            Position::Center => "center",
        }
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Position {
    type Err = ParseEnumError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        Ok(match t.as_str() {
            "top_left" | "topleft" | "tl" => Position::TopLeft,
            "top_right" | "topright" | "tr" => Position::TopRight,
            "bottom_left" | "bottomleft" | "bl" => Position::BottomLeft,
            "bottom_right" | "bottomright" | "br" => Position::BottomRight,
            "center" | "centre" | "c" => Position::Center,
            _ => {
                return Err(ParseEnumError {
                    kind: "position",
                    value: s.into(),
                })
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum NumberingMode {
    #[default]
    FrameIndex,
    /// Renders the frame's time as zero-padded minutes and seconds.
    TimestampMmss,
}

impl FromStr for NumberingMode {
    type Err = ParseEnumError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "frame" | "frame_index" | "index" => Ok(NumberingMode::FrameIndex),
            "timestamp" | "timestamp_mmss" | "mmss" => Ok(NumberingMode::TimestampMmss),
            _ => Err(ParseEnumError {
                kind: "numbering mode",
                value: s.into(),
            }),
        }
    }
}

/// Appearance and placement of the overlaid number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OverlayConfig {
    pub font_size_px: u32,
    pub color: Rgb,
    pub position: Position,
    pub margin_px: u32,
    pub numbering_mode: NumberingMode,
}

/// Size 40, red, bottom-right, 10 px margin, frame indices.
impl Default for OverlayConfig {
    fn default() -> Self {
        Self {
            font_size_px: 40,
            color: Rgb::RED,
            position: Position::BottomRight,
            margin_px: 10,
            numbering_mode: NumberingMode::FrameIndex,
        }
    }
}

impl OverlayConfig {
    pub fn new(font_size_px: u32, color: Rgb, position: Position) -> Result<Self, OverlayError> {
        let config = Self {
            font_size_px,
            color,
            position,
            ..Self::default()
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), OverlayError> {
        if (MIN_FONT_SIZE..=MAX_FONT_SIZE).contains(&self.font_size_px) {
            Ok(())
        } else {
            Err(OverlayError::FontSize(self.font_size_px))
        }
    }

    /// The label shown for `value` under this config's numbering mode.
    pub fn label(&self, value: u64) -> String {
        match self.numbering_mode {
            NumberingMode::FrameIndex => format!("{value}"),
            NumberingMode::TimestampMmss => format_mmss(value),
        }
    }
}

/// `seconds` as `MM:SS`; minutes are not wrapped at 60.
pub fn format_mmss(seconds: u64) -> String {
    format!("{:02}:{:02}", seconds / 60, seconds % 60)
}

/// Pixel rectangle a rendered label may modify.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GlyphBox {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl GlyphBox {
    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x && x < self.x + self.width && y >= self.y && y < self.y + self.height
    }
}

/// Places a `text` label on a `frame_width` x `frame_height` canvas.
///
/// The margin runs from the box to the nearest canvas edges; `Center` aligns
/// box and canvas centers. Margins that would push the box off the canvas are
/// clamped, and a box larger than the canvas is a layout error.
pub fn glyph_box(
    frame_width: u32,
    frame_height: u32,
    text: &str,
    config: &OverlayConfig,
) -> Result<GlyphBox, OverlayError> {
    config.validate()?;
    let (w, h) = font::text_extent(text, config.font_size_px);
    if w > frame_width || h > frame_height {
        return Err(OverlayError::Layout {
            text_width: w,
            text_height: h,
            canvas_width: frame_width,
            canvas_height: frame_height,
        });
    }
    let (max_x, max_y) = (frame_width - w, frame_height - h);
    let m = config.margin_px;
    let (x, y) = match config.position {
        Position::TopLeft => (m, m),
        Position::TopRight => (max_x.saturating_sub(m), m),
        Position::BottomLeft => (m, max_y.saturating_sub(m)),
        Position::BottomRight => (max_x.saturating_sub(m), max_y.saturating_sub(m)),
        Position::Center => (max_x / 2, max_y / 2),
    };
    Ok(GlyphBox {
        x: x.min(max_x),
        y: y.min(max_y),
        width: w,
        height: h,
    })
}

/// Draws `text` (digits and `:` only) onto a copy of `frame`.
pub fn render_text(
    frame: &FrameImage,
    text: &str,
    config: &OverlayConfig,
) -> Result<(FrameImage, GlyphBox), OverlayError> {
    let bbox = glyph_box(frame.width(), frame.height(), text, config)?;
    let mask = font::rasterize(text, config.font_size_px).ok_or(OverlayError::Layout {
        text_width: 0,
        text_height: 0,
        canvas_width: frame.width(),
        canvas_height: frame.height(),
    })?;
    let mut out = frame.clone();
    let color = [config.color.r, config.color.g, config.color.b];
    for my in 0..mask.height {
        for mx in 0..mask.width {
            let a = mask.alpha[(my * mask.width + mx) as usize] as u32;
            if a == 0 {
                continue;
            }
            let px = out.pixel_mut(bbox.x + mx, bbox.y + my);
            for (dst, &c) in px.iter_mut().zip(&color) {
                *dst = ((*dst as u32 * (255 - a) + c as u32 * a + 127) / 255) as u8;
            }
        }
    }
    Ok((out, bbox))
}

/// Draws `value` onto a copy of `frame`, as a decimal or `MM:SS` depending on
/// the numbering mode.
pub fn render_number(
    frame: &FrameImage,
    value: u64,
    config: &OverlayConfig,
) -> Result<FrameImage, OverlayError> {
    if value >= MAX_VALUE {
        return Err(OverlayError::ValueTooLarge(value));
    }
    render_text(frame, &config.label(value), config).map(|(img, _)| img)
}

/// One rendered label: source frame index and the text drawn on it.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Annotation {
    pub index: usize,
    pub rendered_text: String,
}

#[derive(Debug, Clone)]
pub struct AnnotatedSequence {
    pub frames: Vec<FrameImage>,
    pub annotations: Vec<Annotation>,
}

/// Labels the frames selected by `plan` with their original index (or their
/// `index / fps` timestamp). Unselected frames are returned unchanged.
pub fn annotate_sequence(
    frames: &[FrameImage],
    plan: &SamplingPlan,
    config: &OverlayConfig,
    fps: f64,
) -> Result<AnnotatedSequence, OverlayError> {
    if !(fps.is_finite() && fps > 0.0) {
        return Err(OverlayError::InvalidFps(fps));
    }
    config.validate()?;
    let selected = plan_indices(frames.len(), plan);
    let mut out = frames.to_vec();
    let mut annotations = Vec::with_capacity(selected.len());
    for index in selected {
        let value = match config.numbering_mode {
            NumberingMode::FrameIndex => index as u64,
            NumberingMode::TimestampMmss => (index as f64 / fps) as u64,
        };
        let wrap = |source| OverlayError::Frame {
            index,
            source: Box::new(source),
        };
        if value >= MAX_VALUE {
            return Err(wrap(OverlayError::ValueTooLarge(value)));
        }
        let text = config.label(value);
        let (img, _) = render_text(&frames[index], &text, config).map_err(wrap)?;
        out[index] = img;
        annotations.push(Annotation {
            index,
            rendered_text: text,
        });
    }
    Ok(AnnotatedSequence {
        frames: out,
        annotations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn canvas() -> FrameImage {
        let mut px = Vec::with_capacity(336 * 336 * 3);
        for y in 0..336u32 {
            for x in 0..336u32 {
                px.extend_from_slice(&[(x % 200) as u8 + 30, (y % 180) as u8 + 40, 90]);
            }
        }
        FrameImage::new(336, 336, px).unwrap()
    }

    fn changed(a: &FrameImage, b: &FrameImage) -> Vec<(u32, u32)> {
        let mut out = Vec::new();
        for y in 0..a.height() {
            for x in 0..a.width() {
                if a.pixel(x, y) != b.pixel(x, y) {
                    out.push((x, y));
                }
            }
        }
        out
    }

    /// FNV-1a, used to pin rendered buffers.
    fn fnv64(bytes: &[u8]) -> u64 {
        bytes.iter().fold(0xcbf29ce484222325, |h, &b| {
            (h ^ b as u64).wrapping_mul(0x100000001b3)
        })
    }

    #[test]
    fn seven_bottom_right_stays_in_quadrant_and_matches_pin() {
        let base = canvas();
        let out = render_number(&base, 7, &OverlayConfig::default()).unwrap();
        let diff = changed(&base, &out);
        assert!(!diff.is_empty());
        assert!(diff.iter().all(|&(x, y)| x >= 168 && y >= 168));
        let bbox = glyph_box(336, 336, "7", &OverlayConfig::default()).unwrap();
        assert_eq!(bbox, GlyphBox { x: 302, y: 286, width: 24, height: 40 });
        assert_eq!(fnv64(out.pixels()), 0x86ae773420804b9a);
    }

    #[test]
    fn zero_renders_one_glyph() {
        let base = canvas();
        for position in Position::ALL {
            let config = OverlayConfig { position, ..OverlayConfig::default() };
            let out = render_number(&base, 0, &config).unwrap();
            assert!(!changed(&base, &out).is_empty());
            assert_eq!(glyph_box(336, 336, "0", &config).unwrap().width, 24);
        }
    }

    #[test]
    fn centered_label_covers_center() {
        let config = OverlayConfig { position: Position::Center, ..OverlayConfig::default() };
        let bbox = glyph_box(336, 336, "99", &config).unwrap();
        assert!(bbox.contains(168, 168));
        assert_eq!(bbox.x * 2 + bbox.width, 336);
        assert_eq!(bbox.y * 2 + bbox.height, 336);
    }

    #[test]
    fn changes_stay_inside_box_for_every_position() {
        let base = canvas();
        for position in Position::ALL {
            for size in [8, 40, 160] {
                let config = OverlayConfig {
                    font_size_px: size,
                    position,
                    color: Rgb::BLUE,
                    ..OverlayConfig::default()
                };
                let bbox = glyph_box(336, 336, "12", &config).unwrap();
                let out = render_number(&base, 12, &config).unwrap();
                assert!(changed(&base, &out).iter().all(|&(x, y)| bbox.contains(x, y)));
            }
        }
    }

    #[test]
    fn layout_errors() {
        let big = OverlayConfig { font_size_px: 160, ..OverlayConfig::default() };
        // 7 digits at 96 px each cannot fit 336 px.
        assert!(matches!(
            render_number(&canvas(), 1_234_567, &big),
            Err(OverlayError::Layout { .. })
        ));
        assert!(matches!(
            render_number(&canvas(), MAX_VALUE, &OverlayConfig::default()),
            Err(OverlayError::ValueTooLarge(_))
        ));
        let tiny = OverlayConfig { font_size_px: 7, ..OverlayConfig::default() };
        assert_eq!(tiny.validate(), Err(OverlayError::FontSize(7)));
    }

    #[test]
    fn oversized_margin_is_clamped() {
        let config = OverlayConfig { margin_px: 1000, ..OverlayConfig::default() };
        let bbox = glyph_box(336, 336, "5", &config).unwrap();
        assert_eq!((bbox.x, bbox.y), (0, 0));
    }

    #[test]
    fn timestamp_labels() {
        let config = OverlayConfig {
            numbering_mode: NumberingMode::TimestampMmss,
            ..OverlayConfig::default()
        };
        assert_eq!(config.label(70), "01:10");
        assert_eq!(format_mmss(0), "00:00");
        assert_eq!(format_mmss(6000), "100:00");

        let frames = vec![FrameImage::filled(336, 336, Rgb::WHITE).unwrap(); 71];
        let seq = annotate_sequence(&frames, &SamplingPlan::all(), &config, 1.0).unwrap();
        assert_eq!(seq.annotations[70].rendered_text, "01:10");
        let seq = annotate_sequence(&frames, &SamplingPlan::all(), &config, 0.5).unwrap();
        assert_eq!(seq.annotations[35].rendered_text, "01:10");
    }

    #[test]
    fn annotates_all_nineteen_frames() {
        let frames = vec![canvas(); 19];
        let seq =
            annotate_sequence(&frames, &SamplingPlan::all(), &OverlayConfig::default(), 1.0).unwrap();
        let texts: Vec<_> = seq.annotations.iter().map(|a| a.rendered_text.clone()).collect();
        let expected: Vec<_> = (0..19).map(|i| format!("{i}")).collect();
        assert_eq!(texts, expected);
        assert!(seq.frames.iter().all(|f| f != &frames[0]));
    }

    #[test]
    fn sampled_frames_keep_original_indices() {
        let frames = vec![canvas(); 10];
        let plan = SamplingPlan::uniform(SamplingRatio::new(0.2).unwrap());
        let seq = annotate_sequence(&frames, &plan, &OverlayConfig::default(), 1.0).unwrap();
        assert_eq!(
            seq.annotations,
            vec![
                Annotation { index: 0, rendered_text: "0".into() },
                Annotation { index: 5, rendered_text: "5".into() },
            ]
        );
        for (i, f) in seq.frames.iter().enumerate() {
            assert_eq!(f == &frames[i], i != 0 && i != 5, "frame {i}");
        }
    }

    #[test]
    fn annotate_reports_offending_index() {
        let mut frames = vec![canvas(); 3];
        frames[2] = FrameImage::filled(20, 20, Rgb::BLACK).unwrap();
        let err = annotate_sequence(&frames, &SamplingPlan::all(), &OverlayConfig::default(), 1.0)
            .unwrap_err();
        assert!(matches!(err, OverlayError::Frame { index: 2, .. }));
        assert!(annotate_sequence(&frames, &SamplingPlan::all(), &OverlayConfig::default(), 0.0)
            .is_err());
    }

    #[test]
    fn parses_colors_and_positions() {
        assert_eq!("red".parse::<Rgb>().unwrap(), Rgb::RED);
        assert_eq!("#00ff00".parse::<Rgb>().unwrap(), Rgb::GREEN);
        assert_eq!("1, 2, 3".parse::<Rgb>().unwrap(), Rgb::new(1, 2, 3));
        assert!("#00ff0".parse::<Rgb>().is_err());
        assert_eq!(format!("{}", Rgb::new(1, 2, 3)), "#010203");
        assert_eq!("BR".parse::<Position>().unwrap(), Position::BottomRight);
        assert_eq!("top-left".parse::<Position>().unwrap(), Position::TopLeft);
        assert!("middle".parse::<Position>().is_err());
    }
}
