//! Instruction-dataset assembly from grounded annotations and frame folders.
//!
//! Annotations are JSON Lines of `{video_id, query, start_s, end_s, id?}`.
//! Frames of video `v` are read from `<frames_root>/v/` and written annotated
//! to `<out>/frames/v/`. The manifest lists one [`InstructionRecord`] per
//! usable annotation, ordered by video id and then input order.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use numpro_core::overlay::{OverlayConfig, SamplingPlan};
use numpro_core::prompt::{build_qa, seconds_to_frames};
use numpro_core::TemporalSpan;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decode::DecodeHook;
use crate::frames::annotate_dir;
use crate::jsonl::{self, JsonlError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRow {
    #[serde(default)]
    pub id: Option<String>,
    pub video_id: String,
    pub query: String,
    pub start_s: f64,
    pub end_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionRecord {
    pub id: String,
    pub video_id: String,
    pub fps: f64,
    pub query: String,
    pub question: String,
    pub answer: String,
    /// Relative to the manifest's directory.
    pub frame_paths: Vec<String>,
    pub span_frames: TemporalSpan,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Annotations(#[from] JsonlError),
    #[error("frames root {path}: {source}")]
    FramesRoot {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// Where a build can find containers to decode when a frame folder is absent.
#[derive(Debug, Clone)]
pub struct VideoSource {
    pub videos_dir: PathBuf,
    pub hook: DecodeHook,
}

#[derive(Debug, Clone)]
pub struct BuildOptions {
    pub config: OverlayConfig,
    pub plan: SamplingPlan,
    pub fps: f64,
    pub canvas: u32,
    pub decode: Option<VideoSource>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct BuildSummary {
    pub annotation_rows: usize,
    pub malformed_rows: usize,
    pub records: usize,
    pub excluded_videos: usize,
    pub excluded_annotations: usize,
    pub manifest: PathBuf,
    pub exclusions: PathBuf,
}

struct VideoOutcome {
    records: Vec<InstructionRecord>,
    log: Vec<String>,
    excluded_video: bool,
    excluded_annotations: usize,
}

fn container_for(dir: &Path, video_id: &str) -> Option<PathBuf> {
    let mut hits: Vec<PathBuf> = fs::read_dir(dir)
        .ok()?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.file_stem().is_some_and(|s| s == video_id))
        .collect();
    hits.sort();
    hits.into_iter().next()
}

fn build_video(
    video_id: &str,
    rows: &[(usize, AnnotationRow)],
    frames_root: &Path,
    out: &Path,
    opts: &BuildOptions,
) -> VideoOutcome {
    let exclude = |reason: String| VideoOutcome {
        records: Vec::new(),
        log: vec![format!("video {video_id}: excluded ({} annotations): {reason}", rows.len())],
        excluded_video: true,
        excluded_annotations: 0,
    };
    if video_id.is_empty() || video_id.contains(['/', '\\']) || video_id == "." || video_id == ".." {
        return exclude("video id is not a plain directory name".into());
    }
    let mut input = frames_root.join(video_id);
    if !input.is_dir() {
        match &opts.decode {
            Some(src) => match container_for(&src.videos_dir, video_id) {
                Some(container) => {
                    let decoded = out.join("decoded").join(video_id);
                    if let Err(e) = src.hook.run(&container, opts.fps, &decoded) {
                        return exclude(e.to_string());
                    }
                    input = decoded;
                }
                None => return exclude(format!("no frame directory {} and no container", input.display())),
            },
            None => return exclude(format!("frame directory {} not found", input.display())),
        }
    }
    let target = out.join("frames").join(video_id);
    let annotated = match annotate_dir(&input, &target, &opts.plan, &opts.config, opts.fps, opts.canvas) {
        Ok(a) => a,
        Err(e) => {
            let _ = fs::remove_dir_all(&target);
            return exclude(e.to_string());
        }
    };
    let n_frames = annotated.frames.len();
    let frame_paths: Vec<String> = annotated
        .frames
        .iter()
        .map(|p| {
            let name = p.file_name().unwrap_or_default().to_string_lossy();
            format!("frames/{video_id}/{name}")
        })
        .collect();

    let mut outcome = VideoOutcome {
        records: Vec::new(),
        log: Vec::new(),
        excluded_video: false,
        excluded_annotations: 0,
    };
    for (k, (line, row)) in rows.iter().enumerate() {
        let id = row.id.clone().unwrap_or_else(|| format!("{video_id}_{k:04}"));
        let built = seconds_to_frames(row.start_s, row.end_s, opts.fps, n_frames).and_then(|(s, e)| {
            let (question, answer) = build_qa(&row.query, s, e)?;
            Ok((question, answer, TemporalSpan::frames(s as f64, e as f64)?))
        });
        match built {
            Ok((question, answer, span_frames)) => outcome.records.push(InstructionRecord {
                id,
                video_id: video_id.to_owned(),
                fps: opts.fps,
                query: row.query.clone(),
                question,
                answer,
                frame_paths: frame_paths.clone(),
                span_frames,
            }),
            Err(e) => {
                outcome.excluded_annotations += 1;
                outcome.log.push(format!("line {line}: annotation {id} excluded: {e}"));
            }
        }
    }
    outcome
}

/// Builds `<out>/manifest.jsonl`, `<out>/exclusions.log` and the annotated
/// frame tree. Videos are processed in parallel; outputs do not depend on
/// scheduling.
pub fn build_dataset(
    annotations: &Path,
    frames_root: &Path,
    out: &Path,
    opts: &BuildOptions,
) -> Result<BuildSummary, DatasetError> {
    fs::read_dir(frames_root).map_err(|source| DatasetError::FramesRoot {
        path: frames_root.to_path_buf(),
        source,
    })?;
    let out_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| DatasetError::Output { path, source }
    };
    fs::create_dir_all(out).map_err(out_err(out))?;

    let rows = jsonl::read_lenient::<AnnotationRow>(annotations)?;
    let mut summary = BuildSummary {
        annotation_rows: rows.len(),
        ..Default::default()
    };
    let mut log = Vec::new();
    let mut by_video: BTreeMap<String, Vec<(usize, AnnotationRow)>> = BTreeMap::new();
    for line in rows {
        match line.value {
            Ok(row) => by_video.entry(row.video_id.clone()).or_default().push((line.number, row)),
            Err(e) => {
                summary.malformed_rows += 1;
                log.push(format!("line {}: malformed annotation: {e}", line.number));
            }
        }
    }

    let outcomes: Vec<VideoOutcome> = by_video
        .par_iter()
        .map(|(video, rows)| build_video(video, rows, frames_root, out, opts))
        .collect();
    let mut records = Vec::new();
    for o in outcomes {
        summary.excluded_videos += o.excluded_video as usize;
        summary.excluded_annotations += o.excluded_annotations;
        log.extend(o.log);
        records.extend(o.records);
    }
    summary.records = records.len();

    let manifest = out.join("manifest.jsonl");
    jsonl::write(&manifest, &records).map_err(out_err(&manifest))?;
    let exclusions = out.join("exclusions.log");
    let text = log.iter().fold(String::new(), |mut acc, l| {
        let _ = writeln!(acc, "{l}");
        acc
    });
    fs::write(&exclusions, text).map_err(out_err(&exclusions))?;
    for l in &log {
        log::warn!("{l}");
    }
    summary.manifest = manifest;
    summary.exclusions = exclusions;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::save;
    use numpro_core::overlay::{FrameImage, Rgb};

    fn frames(dir: &Path, n: usize) {
        fs::create_dir_all(dir).unwrap();
        for i in 0..n {
            let img = FrameImage::filled(48, 32, Rgb::new(i as u8, 90, 200)).unwrap();
            save(&dir.join(format!("frame_{i:06}.png")), &img).unwrap();
        }
    }

    fn opts() -> BuildOptions {
        BuildOptions {
            config: OverlayConfig::default(),
            plan: SamplingPlan::all(),
            fps: 0.5,
            canvas: 112,
            decode: None,
        }
    }

    #[test]
    fn records_exclusions_and_malformed_rows() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("frames");
        frames(&root.join("v1"), 12);
        let ann = dir.path().join("ann.jsonl");
        fs::write(
            &ann,
            "{\"video_id\":\"v1\",\"query\":\"a woman eats food\",\"start_s\":8.0,\"end_s\":22.0}\n\
             not json\n\
             {\"video_id\":\"v1\",\"query\":\"late\",\"start_s\":90.0,\"end_s\":95.0}\n\
             {\"video_id\":\"gone\",\"query\":\"q\",\"start_s\":0,\"end_s\":1}\n",
        )
        .unwrap();
        let out = dir.path().join("out");
        let s = build_dataset(&ann, &root, &out, &opts()).unwrap();
        assert_eq!((s.annotation_rows, s.malformed_rows, s.records), (4, 1, 1));
        assert_eq!((s.excluded_videos, s.excluded_annotations), (1, 1));
        let recs: Vec<InstructionRecord> = jsonl::read(&s.manifest).unwrap().into_iter().map(|l| l.value).collect();
        assert_eq!(recs[0].question, "During which frames can we see a woman eats food?");
        assert_eq!(recs[0].answer, "From 4 to 11");
        assert_eq!(recs[0].id, "v1_0000");
        assert_eq!(recs[0].frame_paths.len(), 12);
        assert!(out.join(&recs[0].frame_paths[11]).exists());
        let log = fs::read_to_string(&s.exclusions).unwrap();
        assert_eq!(log.lines().count(), 3, "{log}");
        assert!(log.lines().next().unwrap().starts_with("line 2: malformed"));
    }

    #[test]
    fn decoder_fills_in_missing_frame_folders() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("frames");
        fs::create_dir_all(&root).unwrap();
        let videos = dir.path().join("videos");
        frames(&dir.path().join("src"), 3);
        fs::create_dir_all(&videos).unwrap();
        fs::write(videos.join("clip.mp4"), "container").unwrap();
        let src = dir.path().join("src");
        let hook = DecodeHook::new(format!("cp '{}'/*.png {{out_dir}}/", src.display())).unwrap();
        let ann = dir.path().join("ann.jsonl");
        fs::write(&ann, "{\"video_id\":\"clip\",\"query\":\"q\",\"start_s\":0,\"end_s\":2}\n").unwrap();
        let o = BuildOptions {
            decode: Some(VideoSource { videos_dir: videos, hook }),
            ..opts()
        };
        let s = build_dataset(&ann, &root, &dir.path().join("out"), &o).unwrap();
        assert_eq!(s.records, 1);
    }
}
