//! Embedding providers for design search.
//!
//! Keys are `text:<text>` for texts and `img:<sha256>` for images, where the
//! digest covers the little-endian width and height followed by the RGB
//! pixels. A precomputed file and a cache replay file share one format: JSON
//! Lines of `{key, dim, values}`.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use base64::Engine;
use numpro_core::design::{DesignError, Embedding, EmbeddingProvider};
use numpro_core::overlay::FrameImage;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::client::classify_status;
use crate::jsonl::{self, JsonlError};
use crate::retry::{Attempt, RetryPolicy};

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("no embedding for key {0:?}")]
    Missing(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Schema(#[from] JsonlError),
    #[error("{key:?}: declared dim {declared} but {actual} values")]
    Dim { key: String, declared: usize, actual: usize },
    #[error("embedding endpoint: {0}")]
    Http(String),
    #[error("{key:?}: {source}")]
    Embedding {
        key: String,
        #[source]
        source: DesignError,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRow {
    pub key: String,
    pub dim: usize,
    pub values: Vec<f64>,
}

pub fn text_key(text: &str) -> String {
    format!("text:{text}")
}

pub fn image_key(image: &FrameImage) -> String {
    let mut h = Sha256::new();
    h.update(image.width().to_le_bytes());
    h.update(image.height().to_le_bytes());
    h.update(image.pixels());
    format!("img:{}", hex::encode(h.finalize()))
}

fn to_embedding(key: &str, values: Vec<f64>) -> Result<Embedding, ProviderError> {
    Embedding::normalized(values).map_err(|source| ProviderError::Embedding {
        key: key.to_owned(),
        source,
    })
}

/// Embeddings looked up by key from JSON Lines files.
#[derive(Debug, Default, Clone)]
pub struct PrecomputedProvider {
    table: HashMap<String, Vec<f64>>,
}

impl PrecomputedProvider {
    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        let mut p = Self::default();
        p.extend_from(path)?;
        Ok(p)
    }

    /// Adds rows from another file; later rows replace earlier ones.
    pub fn extend_from(&mut self, path: &Path) -> Result<(), ProviderError> {
        for line in jsonl::read::<EmbeddingRow>(path)? {
            let row = line.value;
            if row.dim != row.values.len() {
                return Err(ProviderError::Dim {
                    key: row.key,
                    declared: row.dim,
                    actual: row.values.len(),
                });
            }
            self.table.insert(row.key, row.values);
        }
        Ok(())
    }

    pub fn insert(&mut self, key: String, values: Vec<f64>) {
        self.table.insert(key, values);
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn get(&self, key: &str) -> Result<Embedding, ProviderError> {
        let values = self.table.get(key).ok_or_else(|| ProviderError::Missing(key.to_owned()))?;
        to_embedding(key, values.clone())
    }
}

impl EmbeddingProvider for PrecomputedProvider {
    type Error = ProviderError;

    fn embed_text(&mut self, text: &str) -> Result<Embedding, ProviderError> {
        self.get(&text_key(text))
    }

    fn embed_image(&mut self, image: &FrameImage) -> Result<Embedding, ProviderError> {
        self.get(&image_key(image))
    }
}

/// Raw-vector source used behind [`CachedProvider`].
pub trait VectorSource {
    fn text_vector(&mut self, text: &str) -> Result<Vec<f64>, ProviderError>;
    fn image_vector(&mut self, image: &FrameImage) -> Result<Vec<f64>, ProviderError>;
}

/// HTTP embedding endpoint.
///
/// Sends `{"model", "input": {"text": ...}}` or
/// `{"model", "input": {"image": <base64 PNG>}}` and accepts either
/// `{"embedding": [...]}` or `{"data": [{"embedding": [...]}]}` back.
pub struct HttpEmbeddingProvider {
    agent: ureq::Agent,
    url: String,
    model: String,
    api_key: Option<String>,
    retry: RetryPolicy,
}

impl HttpEmbeddingProvider {
    pub fn new(url: String, model: String, api_key: Option<String>, timeout: Duration, retry: RetryPolicy) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build();
        Self {
            agent: ureq::Agent::new_with_config(config),
            url,
            model,
            api_key,
            retry,
        }
    }

    fn request(&self, input: Value) -> Result<Vec<f64>, ProviderError> {
        let body = json!({"model": self.model, "input": input});
        let (result, _) = self.retry.run(|_| {
            let mut req = self.agent.post(&self.url);
            if let Some(token) = &self.api_key {
                req = req.header("Authorization", &format!("Bearer {token}"));
            }
            let mut resp = match req.send_json(&body) {
                Ok(r) => r,
                Err(e) => return Attempt::Retry(e.to_string()),
            };
            let status = resp.status().as_u16();
            let text = match resp.body_mut().read_to_string() {
                Ok(t) => t,
                Err(e) => return Attempt::Retry(e.to_string()),
            };
            match classify_status(status, &text) {
                Some(crate::client::TransportError::Transient(m)) => Attempt::Retry(m),
                Some(e) => Attempt::Fail(e.to_string()),
                None => Attempt::Done(text),
            }
        });
        let text = result.map_err(ProviderError::Http)?;
        let json: Value = serde_json::from_str(&text).map_err(|e| ProviderError::Http(e.to_string()))?;
        let vector = json
            .get("embedding")
            .or_else(|| json.pointer("/data/0/embedding"))
            .and_then(Value::as_array)
            .ok_or_else(|| ProviderError::Http("response has no embedding array".into()))?;
        vector
            .iter()
            .map(|v| v.as_f64().ok_or_else(|| ProviderError::Http("non-numeric embedding value".into())))
            .collect()
    }
}

impl VectorSource for HttpEmbeddingProvider {
    fn text_vector(&mut self, text: &str) -> Result<Vec<f64>, ProviderError> {
        self.request(json!({"text": text}))
    }

    fn image_vector(&mut self, image: &FrameImage) -> Result<Vec<f64>, ProviderError> {
        let png = crate::frames::png_bytes(image);
        self.request(json!({"image": base64::engine::general_purpose::STANDARD.encode(png)}))
    }
}

/// Memoizes a [`VectorSource`] and appends every new vector to
/// `<cache_dir>/<provider_id>.jsonl`, which a later run reloads so a sweep
/// can resume or replay offline.
pub struct CachedProvider<S> {
    source: S,
    known: PrecomputedProvider,
    path: PathBuf,
    writer: Option<BufWriter<File>>,
}

impl<S: VectorSource> CachedProvider<S> {
    pub fn open(source: S, cache_dir: &Path, provider_id: &str) -> Result<Self, ProviderError> {
        let io_err = |source| ProviderError::Io {
            path: cache_dir.to_path_buf(),
            source,
        };
        fs::create_dir_all(cache_dir).map_err(io_err)?;
        let path = cache_dir.join(format!("{provider_id}.jsonl"));
        let known = if path.exists() {
            PrecomputedProvider::load(&path)?
        } else {
            PrecomputedProvider::default()
        };
        Ok(Self {
            source,
            known,
            path,
            writer: None,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn remember(&mut self, key: String, values: Vec<f64>) -> Result<Embedding, ProviderError> {
        let emb = to_embedding(&key, values.clone())?;
        let io_err = |source| ProviderError::Io {
            path: self.path.clone(),
            source,
        };
        if self.writer.is_none() {
            let file = OpenOptions::new().create(true).append(true).open(&self.path).map_err(io_err)?;
            self.writer = Some(BufWriter::new(file));
        }
        let row = EmbeddingRow {
            key: key.clone(),
            dim: values.len(),
            values: values.clone(),
        };
        let w = self.writer.as_mut().expect("writer opened above");
        serde_json::to_writer(&mut *w, &row).map_err(io::Error::from).map_err(io_err)?;
        w.write_all(b"\n").and_then(|_| w.flush()).map_err(io_err)?;
        self.known.insert(key, values);
        Ok(emb)
    }

    fn lookup(
        &mut self,
        key: String,
        fetch: impl FnOnce(&mut S) -> Result<Vec<f64>, ProviderError>,
    ) -> Result<Embedding, ProviderError> {
        match self.known.get(&key) {
            Err(ProviderError::Missing(_)) => {
                let values = fetch(&mut self.source)?;
                self.remember(key, values)
            }
            other => other,
        }
    }
}

impl<S: VectorSource> EmbeddingProvider for CachedProvider<S> {
    type Error = ProviderError;

    fn embed_text(&mut self, text: &str) -> Result<Embedding, ProviderError> {
        self.lookup(text_key(text), |s| s.text_vector(text))
    }

    fn embed_image(&mut self, image: &FrameImage) -> Result<Embedding, ProviderError> {
        self.lookup(image_key(image), |s| s.image_vector(image))
    }
}

/// Provider section of a design-search config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProviderConfig {
    Precomputed {
        paths: Vec<PathBuf>,
    },
    Http {
        id: String,
        url: String,
        model: String,
        #[serde(default)]
        api_key_env: Option<String>,
        #[serde(default = "default_timeout")]
        timeout_s: u64,
        cache_dir: PathBuf,
        #[serde(default)]
        retry: RetryPolicy,
    },
}

fn default_timeout() -> u64 {
    60
}

/// A provider built from a [`ProviderConfig`].
pub enum AnyProvider {
    Precomputed(PrecomputedProvider),
    Http(CachedProvider<HttpEmbeddingProvider>),
}

impl ProviderConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut cfg: ProviderConfig = toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        // relative paths in the file are relative to the file
        let base = path.parent().unwrap_or(Path::new(""));
        match &mut cfg {
            ProviderConfig::Precomputed { paths } => paths.iter_mut().for_each(|p| *p = base.join(&*p)),
            ProviderConfig::Http { cache_dir, .. } => *cache_dir = base.join(&*cache_dir),
        }
        Ok(cfg)
    }

    pub fn build(&self) -> Result<AnyProvider, ProviderError> {
        match self {
            ProviderConfig::Precomputed { paths } => {
                let mut p = PrecomputedProvider::default();
                for path in paths {
                    p.extend_from(path)?;
                }
                Ok(AnyProvider::Precomputed(p))
            }
            ProviderConfig::Http {
                id,
                url,
                model,
                api_key_env,
                timeout_s,
                cache_dir,
                retry,
            } => {
                let key = api_key_env.as_deref().and_then(|v| std::env::var(v).ok());
                let http = HttpEmbeddingProvider::new(url.clone(), model.clone(), key, Duration::from_secs(*timeout_s), *retry);
                Ok(AnyProvider::Http(CachedProvider::open(http, cache_dir, id)?))
            }
        }
    }
}

impl EmbeddingProvider for AnyProvider {
    type Error = ProviderError;

    fn embed_text(&mut self, text: &str) -> Result<Embedding, ProviderError> {
        match self {
            AnyProvider::Precomputed(p) => p.embed_text(text),
            AnyProvider::Http(p) => p.embed_text(text),
        }
    }

    fn embed_image(&mut self, image: &FrameImage) -> Result<Embedding, ProviderError> {
        match self {
            AnyProvider::Precomputed(p) => p.embed_image(image),
            AnyProvider::Http(p) => p.embed_image(image),
        }
    }
}

/// Writes rows as a precomputed embedding file.
pub fn write_rows(path: &Path, rows: &[EmbeddingRow]) -> io::Result<()> {
    jsonl::write(path, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use numpro_core::overlay::Rgb;

    struct Counting {
        calls: usize,
    }

    impl VectorSource for Counting {
        fn text_vector(&mut self, text: &str) -> Result<Vec<f64>, ProviderError> {
            self.calls += 1;
            Ok(vec![text.len() as f64, 1.0])
        }
        fn image_vector(&mut self, image: &FrameImage) -> Result<Vec<f64>, ProviderError> {
            self.calls += 1;
            Ok(vec![1.0, image.width() as f64])
        }
    }

    #[test]
    fn image_key_covers_dimensions() {
        let a = FrameImage::filled(2, 3, Rgb::RED).unwrap();
        let b = FrameImage::filled(3, 2, Rgb::RED).unwrap();
        assert_ne!(image_key(&a), image_key(&b));
        assert!(image_key(&a).starts_with("img:"));
        assert_eq!(image_key(&a).len(), 4 + 64);
    }

    #[test]
    fn precomputed_lookup_and_dim_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.jsonl");
        fs::write(&path, "{\"key\":\"text:7\",\"dim\":2,\"values\":[3,4]}\n").unwrap();
        let mut p = PrecomputedProvider::load(&path).unwrap();
        assert_eq!(p.embed_text("7").unwrap().values(), &[0.6, 0.8]);
        assert!(matches!(p.embed_text("8"), Err(ProviderError::Missing(k)) if k == "text:8"));
        fs::write(&path, "{\"key\":\"text:7\",\"dim\":3,\"values\":[3,4]}\n").unwrap();
        assert!(matches!(PrecomputedProvider::load(&path), Err(ProviderError::Dim { .. })));
    }

    #[test]
    fn cache_replays_without_the_source() {
        let dir = tempfile::tempdir().unwrap();
        let img = FrameImage::filled(4, 4, Rgb::BLUE).unwrap();
        let mut first = CachedProvider::open(Counting { calls: 0 }, dir.path(), "clip").unwrap();
        let t = first.embed_text("hello").unwrap();
        first.embed_text("hello").unwrap();
        let i = first.embed_image(&img).unwrap();
        assert_eq!(first.source.calls, 2);
        drop(first);
        let mut second = CachedProvider::open(Counting { calls: 0 }, dir.path(), "clip").unwrap();
        assert_eq!(second.embed_text("hello").unwrap(), t);
        assert_eq!(second.embed_image(&img).unwrap(), i);
        assert_eq!(second.source.calls, 0);
        let replay = PrecomputedProvider::load(&dir.path().join("clip.jsonl")).unwrap();
        assert_eq!(replay.len(), 2);
    }

    #[test]
    fn config_from_toml() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("provider.toml");
        fs::write(&path, "kind = \"http\"\nid = \"clip\"\nurl = \"http://x\"\nmodel = \"m\"\ncache_dir = \"cache\"\n").unwrap();
        let cfg = ProviderConfig::load(&path).unwrap();
        let ProviderConfig::Http { cache_dir, timeout_s, .. } = &cfg else { panic!() };
        assert_eq!(cache_dir, &dir.path().join("cache"));
        assert_eq!(*timeout_s, 60);
        fs::write(&path, "kind = \"precomputed\"\npaths = [\"a.jsonl\"]\n").unwrap();
        assert_eq!(
            ProviderConfig::load(&path).unwrap(),
            ProviderConfig::Precomputed { paths: vec![dir.path().join("a.jsonl")] }
        );
    }
}
