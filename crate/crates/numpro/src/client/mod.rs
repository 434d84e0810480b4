//! Batch inference against chat-completions vision endpoints.
//!
//! Each job becomes one user message: one `image_url` part per frame, in
//! order, then the instruction text. Responses are cached under a key derived
//! from the frame digests, the prompt, the model id and the decoding settings,
//! so a warm cache replays a batch without touching the network.

mod cache;
mod http;

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use base64::Engine;
use numpro_core::prompt::{build_prompt, Task, TemplateError};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cache::{CachedResponse, ResponseCache};
pub use http::{classify_status, extract_content, HttpTransport};

use crate::retry::{Attempt, RetryPolicy};

/// Where requests go. The token itself is never stored, only the name of the
/// environment variable holding it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub url: String,
    pub model: String,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_s: u64,
}

fn default_timeout() -> u64 {
    120
}

impl EndpointConfig {
    pub fn api_key(&self) -> Option<String> {
        let var = self.api_key_env.as_deref()?;
        std::env::var(var).ok().filter(|v| !v.is_empty())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Decoding {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for Decoding {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_tokens: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceJob {
    pub id: String,
    pub frames: Vec<PathBuf>,
    pub task: Task,
    pub query: String,
    pub endpoint: EndpointConfig,
    pub decoding: Decoding,
}

impl InferenceJob {
    pub fn validate(&self) -> Result<(), JobError> {
        if self.frames.is_empty() {
            return Err(JobError::Invalid("job has no frames".into()));
        }
        let t = self.decoding.temperature;
        if !t.is_finite() || t < 0.0 {
            return Err(JobError::Invalid(format!("temperature {t} must be finite and >= 0")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Error)]
pub enum TransportError {
    #[error("transient: {0}")]
    Transient(String),
    #[error("{0}")]
    Permanent(String),
    #[error("payload rejected as too large: {0}")]
    TooLarge(String),
}

/// Sends one chat-completions request and returns the message text.
pub trait Transport: Sync {
    fn complete(&self, endpoint: &EndpointConfig, body: &Value) -> Result<String, TransportError>;
}

#[derive(Debug, Error)]
pub enum JobError {
    #[error("invalid job: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Frame {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Prompt(#[from] TemplateError),
    #[error("payload of {bytes} bytes across {frames} frames exceeds the limit{}{}",
        limit.map(|l| format!(" of {l} bytes")).unwrap_or_default(),
        detail.as_deref().map(|d| format!(" ({d})")).unwrap_or_default())]
    TooLarge {
        bytes: usize,
        frames: usize,
        limit: Option<usize>,
        detail: Option<String>,
    },
    #[error("endpoint failed after {attempts} attempt(s): {message}")]
    Endpoint { attempts: u32, message: String },
    #[error("cache: {0}")]
    Cache(#[source] io::Error),
}

/// Result of one job; `outcome` is an error record rather than a batch abort.
#[derive(Debug)]
pub struct JobResult {
    pub id: String,
    pub outcome: Result<JobResponse, JobError>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JobResponse {
    pub raw_text: String,
    pub cache_key: String,
    /// Served from the cache without a request.
    pub cached: bool,
    /// Requests sent; 0 for cache hits.
    pub attempts: u32,
}

#[derive(Debug, Clone)]
pub struct BatchOptions {
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
    /// Requests whose JSON body exceeds this many bytes are not sent.
    pub max_payload_bytes: usize,
    /// Directory for per-job request/response transcripts.
    pub transcripts: Option<PathBuf>,
}

impl Default for BatchOptions {
    fn default() -> Self {
        Self {
            max_in_flight: 4,
            retry: RetryPolicy::default(),
            max_payload_bytes: 32 * 1024 * 1024,
            transcripts: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum BatchError {
    #[error("max_in_flight must be at least 1")]
    ZeroInFlight,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn mime_for(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("jpg" | "jpeg") => "image/jpeg",
        _ => "image/png",
    }
}

/// Content-addressed cache key. Identical frames, prompt, model and decoding
/// always give the same key, whatever the frame file names are.
pub fn cache_key(frame_digests: &[String], prompt: &str, model: &str, decoding: &Decoding) -> String {
    let canonical = json!({
        "frames": frame_digests,
        "prompt": prompt,
        "model": model,
        "temperature": decoding.temperature,
        "max_tokens": decoding.max_tokens,
    });
    sha256_hex(canonical.to_string().as_bytes())
}

/// A job with its frames read and its request body assembled.
#[derive(Debug, Clone)]
pub struct PreparedRequest {
    pub cache_key: String,
    pub prompt: String,
    pub frame_digests: Vec<String>,
    pub body: Value,
    pub body_bytes: usize,
}

pub fn prepare(job: &InferenceJob) -> Result<PreparedRequest, JobError> {
    job.validate()?;
    let prompt = build_prompt(job.task, &job.query)?;
    let mut digests = Vec::with_capacity(job.frames.len());
    let mut content = Vec::with_capacity(job.frames.len() + 1);
    for path in &job.frames {
        let bytes = fs::read(path).map_err(|source| JobError::Frame {
            path: path.clone(),
            source,
        })?;
        digests.push(sha256_hex(&bytes));
        let data = base64::engine::general_purpose::STANDARD.encode(&bytes);
        content.push(json!({
            "type": "image_url",
            "image_url": {"url": format!("data:{};base64,{data}", mime_for(path))},
        }));
    }
    content.push(json!({"type": "text", "text": prompt}));
    let body = json!({
        "model": job.endpoint.model,
        "temperature": job.decoding.temperature,
        "max_tokens": job.decoding.max_tokens,
        "messages": [{"role": "user", "content": content}],
    });
    let body_bytes = body.to_string().len();
    Ok(PreparedRequest {
        cache_key: cache_key(&digests, &prompt, &job.endpoint.model, &job.decoding),
        prompt,
        frame_digests: digests,
        body,
        body_bytes,
    })
}

fn run_job(job: &InferenceJob, transport: &dyn Transport, cache: &ResponseCache, options: &BatchOptions) -> Result<JobResponse, JobError> {
    let req = prepare(job)?;
    if let Some(hit) = cache.load(&req.cache_key).map_err(JobError::Cache)? {
        return Ok(JobResponse {
            raw_text: hit.raw_text,
            cache_key: req.cache_key,
            cached: true,
            attempts: 0,
        });
    }
    let too_large = |detail| JobError::TooLarge {
        bytes: req.body_bytes,
        frames: job.frames.len(),
        limit: Some(options.max_payload_bytes),
        detail,
    };
    if req.body_bytes > options.max_payload_bytes {
        return Err(too_large(None));
    }

    let (result, attempts) = options.retry.run(|attempt| match transport.complete(&job.endpoint, &req.body) {
        Ok(text) => Attempt::Done(text),
        Err(e @ TransportError::Transient(_)) => {
            log::warn!("job {}: attempt {attempt} failed: {e}", job.id);
            Attempt::Retry(e)
        }
        Err(e) => Attempt::Fail(e),
    });
    if let Some(dir) = &options.transcripts {
        write_transcript(dir, job, &req, &result, attempts);
    }
    let raw_text = match result {
        Ok(text) => text,
        Err(TransportError::TooLarge(detail)) => return Err(too_large(Some(detail))),
        Err(e) => {
            return Err(JobError::Endpoint {
                attempts,
                message: e.to_string(),
            })
        }
    };
    cache.store(&req.cache_key, &raw_text).map_err(JobError::Cache)?;
    Ok(JobResponse {
        raw_text,
        cache_key: req.cache_key,
        cached: false,
        attempts,
    })
}

/// Transcripts record frame digests instead of the base64 payload.
fn write_transcript(
    dir: &Path,
    job: &InferenceJob,
    req: &PreparedRequest,
    result: &Result<String, TransportError>,
    attempts: u32,
) {
    let record = json!({
        "id": job.id,
        "cache_key": req.cache_key,
        "endpoint": job.endpoint.url,
        "model": job.endpoint.model,
        "decoding": job.decoding,
        "prompt": req.prompt,
        "frames": job.frames.iter().zip(&req.frame_digests)
            .map(|(p, d)| json!({"path": p, "sha256": d}))
            .collect::<Vec<_>>(),
        "request_bytes": req.body_bytes,
        "attempts": attempts,
        "response": result.as_ref().ok(),
        "error": result.as_ref().err().map(ToString::to_string),
    });
    let safe: String = job
        .id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect();
    let path = dir.join(format!("{safe}.json"));
    let written = fs::create_dir_all(dir)
        .and_then(|_| fs::write(&path, serde_json::to_vec_pretty(&record).unwrap_or_default()));
    if let Err(e) = written {
        log::warn!("could not write transcript {}: {e}", path.display());
    }
}

/// Runs every job with at most `options.max_in_flight` requests outstanding.
///
/// Output position `i` always holds job `i`. Failed jobs yield error records
/// and the batch carries on. Successful responses are in the cache before
/// this returns.
pub fn run_batch(
    jobs: &[InferenceJob],
    transport: &dyn Transport,
    cache: &ResponseCache,
    options: &BatchOptions,
) -> Result<Vec<JobResult>, BatchError> {
    if options.max_in_flight == 0 {
        return Err(BatchError::ZeroInFlight);
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<JobResult>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    let workers = options.max_in_flight.min(jobs.len());
    thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(job) = jobs.get(i) else { break };
                let outcome = run_job(job, transport, cache, options);
                if let Err(e) = &outcome {
                    log::error!("job {}: {e}", job.id);
                }
                let result = JobResult {
                    id: job.id.clone(),
                    outcome,
                };
                slots.lock().unwrap_or_else(|p| p.into_inner())[i] = Some(result);
            });
        }
    });
    Ok(slots
        .into_inner()
        .unwrap_or_else(|p| p.into_inner())
        .into_iter()
        .map(|r| r.expect("every job index is claimed by exactly one worker"))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicU32;

    struct Echo {
        calls: AtomicU32,
    }

    impl Transport for Echo {
        fn complete(&self, _: &EndpointConfig, body: &Value) -> Result<String, TransportError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            let n = body["messages"][0]["content"].as_array().unwrap().len() - 1;
            Ok(format!("From 0 to {}", n - 1))
        }
    }

    fn job(dir: &Path, id: &str, frames: usize) -> InferenceJob {
        let paths = (0..frames)
            .map(|i| {
                let p = dir.join(format!("{id}_{i}.png"));
                fs::write(&p, format!("{id}{i}")).unwrap();
                p
            })
            .collect();
        InferenceJob {
            id: id.into(),
            frames: paths,
            task: Task::Moment,
            query: "a dog runs".into(),
            endpoint: EndpointConfig {
                url: "http://unused".into(),
                model: "m".into(),
                api_key_env: None,
                timeout_s: 5,
            },
            decoding: Decoding::default(),
        }
    }

    #[test]
    fn body_has_images_then_text() {
        let dir = tempfile::tempdir().unwrap();
        let req = prepare(&job(dir.path(), "a", 2)).unwrap();
        let content = req.body["messages"][0]["content"].as_array().unwrap();
        assert_eq!(content.len(), 3);
        assert_eq!(content[0]["type"], "image_url");
        let url = content[1]["image_url"]["url"].as_str().unwrap();
        assert_eq!(url, format!("data:image/png;base64,{}", base64::engine::general_purpose::STANDARD.encode("a1")));
        assert!(content[2]["text"].as_str().unwrap().starts_with(numpro_core::prompt::INSTRUCTION_PREFIX));
        assert_eq!(req.body["temperature"], 0.0);
    }

    #[test]
    fn cache_key_depends_on_content_not_names() {
        let d = Decoding::default();
        let k = cache_key(&["aa".into()], "p", "m", &d);
        assert_eq!(k, cache_key(&["aa".into()], "p", "m", &d));
        assert_ne!(k, cache_key(&["ab".into()], "p", "m", &d));
        assert_ne!(k, cache_key(&["aa".into()], "p", "m2", &d));
        assert_ne!(k, cache_key(&["aa".into()], "p", "m", &Decoding { max_tokens: 1, ..d }));
    }

    #[test]
    fn results_in_order_and_warm_cache_skips_network() {
        let dir = tempfile::tempdir().unwrap();
        let jobs: Vec<_> = (1..=6).map(|i| job(dir.path(), &format!("j{i}"), i)).collect();
        let cache = ResponseCache::new(dir.path().join("cache"));
        let echo = Echo { calls: AtomicU32::new(0) };
        let opts = BatchOptions { max_in_flight: 3, ..Default::default() };
        let cold = run_batch(&jobs, &echo, &cache, &opts).unwrap();
        assert_eq!(echo.calls.load(Ordering::SeqCst), 6);
        for (i, r) in cold.iter().enumerate() {
            assert_eq!(r.id, jobs[i].id);
            assert_eq!(r.outcome.as_ref().unwrap().raw_text, format!("From 0 to {i}"));
        }
        let warm = run_batch(&jobs, &echo, &cache, &opts).unwrap();
        assert_eq!(echo.calls.load(Ordering::SeqCst), 6);
        assert!(warm.iter().all(|r| r.outcome.as_ref().unwrap().cached));
    }

    #[test]
    fn job_level_errors_do_not_stop_the_batch() {
        let dir = tempfile::tempdir().unwrap();
        let mut bad = job(dir.path(), "bad", 1);
        bad.frames.clear();
        let jobs = vec![bad, job(dir.path(), "big", 3), job(dir.path(), "ok", 1)];
        let cache = ResponseCache::new(dir.path().join("cache"));
        let echo = Echo { calls: AtomicU32::new(0) };
        let limit = prepare(&jobs[2]).unwrap().body_bytes;
        let opts = BatchOptions { max_in_flight: 1, max_payload_bytes: limit, ..Default::default() };
        let out = run_batch(&jobs, &echo, &cache, &opts).unwrap();
        assert!(matches!(out[0].outcome, Err(JobError::Invalid(_))));
        let err = out[1].outcome.as_ref().unwrap_err();
        assert!(matches!(err, JobError::TooLarge { frames: 3, .. }), "{err}");
        assert!(err.to_string().contains(&format!("limit of {limit} bytes")));
        assert!(out[2].outcome.is_ok());
        assert_eq!(echo.calls.load(Ordering::SeqCst), 1);
        let zero = BatchOptions { max_in_flight: 0, ..Default::default() };
        assert!(run_batch(&jobs, &echo, &cache, &zero).is_err());
    }
}
