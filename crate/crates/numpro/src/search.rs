//! Design-search inputs and outputs: candidate lists, probe sets, probe
//! images and the score tables.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use numpro_core::design::{pareto_front, ProbePair, RankedCandidate, NUMBER_CANDIDATES};
use numpro_core::overlay::{
    normalize_frame, render_number, FrameImage, NumberingMode, OverlayConfig, OverlayError, Position, Rgb,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frames::{self, FrameError};
use crate::jsonl::{self, JsonlError};

#[derive(Debug, Error)]
pub enum InputError {
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("{path}:{line}: {message}")]
    Row { path: PathBuf, line: usize, message: String },
    #[error("{path}: {message}")]
    File { path: PathBuf, message: String },
    #[error(transparent)]
    Frame(#[from] FrameError),
}

/// One candidate as written in a candidates file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateRow {
    pub size: u32,
    pub color: String,
    pub position: String,
    #[serde(default)]
    pub margin: Option<u32>,
}

impl CandidateRow {
    pub fn to_config(&self) -> Result<OverlayConfig, String> {
        let color: Rgb = self.color.parse().map_err(|e| format!("{e}"))?;
        let position: Position = self.position.parse().map_err(|e| format!("{e}"))?;
        let mut config = OverlayConfig::new(self.size, color, position).map_err(|e| e.to_string())?;
        if let Some(m) = self.margin {
            config.margin_px = m;
        }
        Ok(config)
    }
}

/// Candidate grid given as axes; the product is taken size-major, then
/// color, then position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateAxes {
    pub sizes: Vec<u32>,
    pub colors: Vec<String>,
    pub positions: Vec<String>,
    #[serde(default)]
    pub margin: Option<u32>,
}

impl CandidateAxes {
    /// Sizes 20 to 80, four colors, every position: 80 candidates.
    pub fn standard() -> Self {
        Self {
            sizes: vec![20, 40, 60, 80],
            colors: ["red", "blue", "black", "green"].map(String::from).to_vec(),
            positions: Position::ALL.iter().map(|p| p.as_str().to_owned()).collect(),
            margin: None,
        }
    }

    pub fn rows(&self) -> Vec<CandidateRow> {
        let mut rows = Vec::new();
        for &size in &self.sizes {
            for color in &self.colors {
                for position in &self.positions {
                    rows.push(CandidateRow {
                        size,
                        color: color.clone(),
                        position: position.clone(),
                        margin: self.margin,
                    });
                }
            }
        }
        rows
    }

    pub fn configs(&self) -> Result<Vec<OverlayConfig>, String> {
        self.rows().iter().map(CandidateRow::to_config).collect()
    }
}

/// Reads candidates from JSON Lines of [`CandidateRow`], or from a TOML file
/// of [`CandidateAxes`] when the extension is `.toml`.
pub fn load_candidates(path: &Path) -> Result<Vec<OverlayConfig>, InputError> {
    if path.extension().is_some_and(|e| e == "toml") {
        let file_err = |message: String| InputError::File {
            path: path.to_path_buf(),
            message,
        };
        let text = fs::read_to_string(path).map_err(|e| file_err(e.to_string()))?;
        let axes: CandidateAxes = toml::from_str(&text).map_err(|e| file_err(e.to_string()))?;
        return axes.configs().map_err(file_err);
    }
    jsonl::read::<CandidateRow>(path)?
        .into_iter()
        .map(|line| {
            line.value.to_config().map_err(|message| InputError::Row {
                path: path.to_path_buf(),
                line: line.number,
                message,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Deserialize)]
struct ProbeRow {
    image_id: String,
    caption: String,
    #[serde(default)]
    true_number: Option<u32>,
}

/// Reads probes; a probe without `true_number` gets its position modulo 100.
pub fn load_probes(path: &Path) -> Result<Vec<ProbePair>, InputError> {
    jsonl::read::<ProbeRow>(path)?
        .into_iter()
        .enumerate()
        .map(|(i, line)| {
            let row = line.value;
            let n = row.true_number.unwrap_or(i as u32 % NUMBER_CANDIDATES);
            ProbePair::new(row.image_id, row.caption, n).map_err(|e| InputError::Row {
                path: path.to_path_buf(),
                line: line.number,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Finds `<dir>/<image_id>`, trying `.png`, `.jpg` and `.jpeg` when the id has
/// no matching file as is.
pub fn probe_image_path(dir: &Path, image_id: &str) -> Option<PathBuf> {
    let direct = dir.join(image_id);
    if direct.is_file() {
        return Some(direct);
    }
    ["png", "jpg", "jpeg"]
        .iter()
        .map(|ext| dir.join(format!("{image_id}.{ext}")))
        .find(|p| p.is_file())
}

/// Probe images decoded once and normalized to the canvas.
pub struct ProbeImages {
    images: HashMap<String, FrameImage>,
}

impl ProbeImages {
    pub fn load(dir: &Path, probes: &[ProbePair], canvas: u32) -> Result<Self, InputError> {
        use rayon::prelude::*;
        let mut ids: Vec<&str> = probes.iter().map(|p| p.image_id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        let images = ids
            .par_iter()
            .map(|&id| {
                let path = probe_image_path(dir, id).ok_or_else(|| InputError::File {
                    path: dir.join(id),
                    message: "probe image not found".into(),
                })?;
                let img = frames::load(&path)?;
                let img = normalize_frame(&img, canvas).map_err(|e| InputError::File {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
                Ok((id.to_owned(), img))
            })
            .collect::<Result<HashMap<_, _>, InputError>>()?;
        Ok(Self { images })
    }

    pub fn from_map(images: HashMap<String, FrameImage>) -> Self {
        Self { images }
    }

    /// The probe image with its number drawn in `config`'s style. Numbers are
    /// always drawn as plain indices here.
    pub fn render(&self, probe: &ProbePair, config: &OverlayConfig) -> Result<FrameImage, OverlayError> {
        // an id with no loaded image behaves like an empty image
        let base = self.images.get(&probe.image_id).ok_or(OverlayError::InvalidImage {
            width: 0,
            height: 0,
            len: 0,
        })?;
        let config = OverlayConfig {
            numbering_mode: NumberingMode::FrameIndex,
            ..*config
        };
        render_number(base, probe.true_number as u64, &config)
    }
}

#[derive(Debug, Serialize)]
struct ScoreRow<'a> {
    size: u32,
    color: String,
    position: &'a str,
    number_acc: f64,
    caption_acc: f64,
    combined: f64,
}

fn write_table<'a>(path: &Path, rows: impl IntoIterator<Item = &'a RankedCandidate>) -> csv::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        let c = &r.scored.config;
        w.serialize(ScoreRow {
            size: c.font_size_px,
            color: c.color.to_string(),
            position: c.position.as_str(),
            number_acc: r.scored.number_accuracy,
            caption_acc: r.scored.caption_accuracy,
            combined: r.scored.combined,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// The sibling path that holds the Pareto front: `scores.csv` becomes
/// `scores.pareto.csv`.
pub fn pareto_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("scores");
    out.with_file_name(format!("{stem}.pareto.csv"))
}

/// Writes the ranked table to `out` and its Pareto front, in ranked order,
/// next to it.
pub fn write_scores(out: &Path, ranked: &[RankedCandidate]) -> csv::Result<PathBuf> {
    write_table(out, ranked)?;
    let scored: Vec<_> = ranked.iter().map(|r| r.scored).collect();
    let front = pareto_front(&scored);
    let pareto = pareto_path(out);
    write_table(&pareto, front.iter().map(|&i| &ranked[i]))?;
    Ok(pareto)
}
