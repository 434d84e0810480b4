//! Frame directories: `frame_%06d.{png,jpg,jpeg}` files read as RGB8.

use std::fs;
use std::io::{self, Cursor};
use std::path::{Path, PathBuf};

use image::{ImageFormat, RgbImage};
use numpro_core::overlay::{
    annotate_sequence, normalize_frame, Annotation, FrameImage, OverlayConfig, OverlayError,
    SamplingPlan,
};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Decode {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("{0}: no frame_NNNNNN images found")]
    Empty(PathBuf),
    #[error("{0}: two files share frame number {1}")]
    Duplicate(PathBuf, u64),
    #[error("{path}: {source}")]
    Overlay {
        path: PathBuf,
        #[source]
        source: OverlayError,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> FrameError + '_ {
    move |source| FrameError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// A frame file and the number in its name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameFile {
    pub number: u64,
    pub path: PathBuf,
}

impl FrameFile {
    pub fn file_name(&self) -> &std::ffi::OsStr {
        self.path.file_name().unwrap_or_default()
    }
}

fn frame_number(name: &str) -> Option<u64> {
    let (stem, ext) = name.rsplit_once('.')?;
    if !matches!(ext.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg") {
        return None;
    }
    let digits = stem.strip_prefix("frame_")?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

/// Frame files in `dir`, ordered by the number in their name. A frame's
/// position in this list is its frame index.
pub fn list_frames(dir: &Path) -> Result<Vec<FrameFile>, FrameError> {
    let mut frames = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        if let Some(number) = frame_number(name) {
            frames.push(FrameFile { number, path });
        }
    }
    if frames.is_empty() {
        return Err(FrameError::Empty(dir.to_path_buf()));
    }
    frames.sort_by_key(|f| f.number);
    if let Some(w) = frames.windows(2).find(|w| w[0].number == w[1].number) {
        return Err(FrameError::Duplicate(dir.to_path_buf(), w[0].number));
    }
    Ok(frames)
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<FrameImage, FrameError> {
    let img = image::load_from_memory(bytes)
        .map_err(|source| FrameError::Decode {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    FrameImage::new(w, h, img.into_raw()).map_err(|source| FrameError::Overlay {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load(path: &Path) -> Result<FrameImage, FrameError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode(&bytes, path)
}

fn format_for(path: &Path) -> ImageFormat {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("jpg" | "jpeg") => ImageFormat::Jpeg,
        _ => ImageFormat::Png,
    }
}

pub fn encode(frame: &FrameImage, format: ImageFormat) -> Vec<u8> {
    let img = RgbImage::from_raw(frame.width(), frame.height(), frame.pixels().to_vec())
        .expect("FrameImage buffers always match their dimensions");
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, format)
        .expect("encoding to memory cannot fail for RGB8");
    out.into_inner()
}

pub fn png_bytes(frame: &FrameImage) -> Vec<u8> {
    encode(frame, ImageFormat::Png)
}

/// Writes `frame` in the format implied by the extension of `path`.
pub fn save(path: &Path, frame: &FrameImage) -> Result<(), FrameError> {
    fs::write(path, encode(frame, format_for(path))).map_err(io_err(path))
}

/// Outcome of annotating one frame directory.
#[derive(Debug, Clone)]
pub struct AnnotatedDir {
    pub frames: Vec<PathBuf>,
    pub annotations: Vec<Annotation>,
    /// Frames copied verbatim because they were not selected and already had
    /// the canvas size.
    pub copied: usize,
}

/// Annotates every frame of `input` into `output`, keeping file names, and
/// writes the `annotations.jsonl` sidecar.
///
/// Selected frames are normalized to `canvas` and labelled. Unselected frames
/// already at the canvas size are copied byte for byte; other unselected
/// frames are written normalized so the output sequence has one resolution.
pub fn annotate_dir(
    input: &Path,
    output: &Path,
    plan: &SamplingPlan,
    config: &OverlayConfig,
    fps: f64,
    canvas: u32,
) -> Result<AnnotatedDir, FrameError> {
    let files = list_frames(input)?;
    fs::create_dir_all(output).map_err(io_err(output))?;

    let raw: Vec<(Vec<u8>, FrameImage)> = files
        .par_iter()
        .map(|f| {
            let bytes = fs::read(&f.path).map_err(io_err(&f.path))?;
            let img = decode(&bytes, &f.path)?;
            Ok((bytes, img))
        })
        .collect::<Result<_, FrameError>>()?;
    let normalized: Vec<FrameImage> = raw
        .par_iter()
        .zip(&files)
        .map(|((_, img), f)| {
            normalize_frame(img, canvas).map_err(|source| FrameError::Overlay {
                path: f.path.clone(),
                source,
            })
        })
        .collect::<Result<_, _>>()?;

    let seq = annotate_sequence(&normalized, plan, config, fps).map_err(|source| {
        let path = match &source {
            OverlayError::Frame { index, .. } => files[*index].path.clone(),
            _ => input.to_path_buf(),
        };
        FrameError::Overlay { path, source }
    })?;

    let mut selected = vec![false; files.len()];
    for a in &seq.annotations {
        selected[a.index] = true;
    }
    let copied: Vec<bool> = files
        .par_iter()
        .enumerate()
        .map(|(i, f)| {
            let dest = output.join(f.file_name());
            let (bytes, original) = &raw[i];
            if !selected[i] && original.width() == canvas && original.height() == canvas {
                fs::write(&dest, bytes).map_err(io_err(&dest))?;
                Ok(true)
            } else {
                save(&dest, &seq.frames[i])?;
                Ok(false)
            }
        })
        .collect::<Result<_, FrameError>>()?;

    let sidecar = output.join("annotations.jsonl");
    crate::jsonl::write(&sidecar, &seq.annotations).map_err(io_err(&sidecar))?;

    Ok(AnnotatedDir {
        frames: files.iter().map(|f| output.join(f.file_name())).collect(),
        annotations: seq.annotations,
        copied: copied.iter().filter(|&&c| c).count(),
    })
}
