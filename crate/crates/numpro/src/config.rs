//! Run configuration file. Every field is optional; command-line flags win
//! over the file, and the file wins over built-in defaults.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::client::Decoding;

/// File name of the resolved configuration written next to outputs.
pub const RESOLVED_CONFIG: &str = "numpro.resolved.toml";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub canvas: Option<u32>,
    pub fps: Option<f64>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub log_level: Option<String>,
    pub jobs: Option<usize>,
    pub overlay: OverlaySection,
    pub design_search: DesignSearchSection,
    pub build_dataset: BuildDatasetSection,
    pub infer: InferSection,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OverlaySection {
    pub size: Option<u32>,
    pub color: Option<String>,
    pub position: Option<String>,
    pub margin: Option<u32>,
    pub mode: Option<String>,
    pub ratio: Option<f64>,
    pub sampling: Option<String>,
    pub decode_cmd: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignSearchSection {
    pub candidates: Option<PathBuf>,
    pub probes: Option<PathBuf>,
    pub images: Option<PathBuf>,
    pub provider: Option<PathBuf>,
    pub export_renders: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuildDatasetSection {
    pub annotations: Option<PathBuf>,
    pub frames_root: Option<PathBuf>,
    pub videos_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferSection {
    pub manifest: Option<PathBuf>,
    pub endpoint: Option<PathBuf>,
    pub task: Option<String>,
    pub max_in_flight: Option<usize>,
    pub cache: Option<PathBuf>,
    pub transcripts: Option<PathBuf>,
    pub temperature: Option<f64>,
    pub max_tokens: Option<u32>,
    pub max_attempts: Option<u32>,
    pub base_delay_ms: Option<u64>,
    pub max_payload_bytes: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub threshold: Option<f64>,
    pub clip_len: Option<f64>,
    pub top_k: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config values are all representable in TOML")
    }

    /// Writes `self` as [`RESOLVED_CONFIG`] into `dir`.
    pub fn echo_into(&self, dir: &Path) -> std::io::Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let path = dir.join(RESOLVED_CONFIG);
        fs::write(&path, self.to_toml())?;
        Ok(path)
    }
}

/// `flag`, else `file`, else `default`.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

/// Endpoint file: where to send requests and how to decode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointFile {
    pub url: String,
    pub model: String,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub timeout_s: Option<u64>,
    #[serde(default)]
    pub decoding: Option<Decoding>,
}

impl EndpointFile {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}
