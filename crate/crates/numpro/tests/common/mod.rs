#![allow(dead_code)]

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use numpro::frames::save;
use numpro_core::overlay::FrameImage;
use serde::Deserialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

#[derive(Debug, Clone, Deserialize)]
pub struct CorpusCase {
    pub text: String,
    pub n_frames: usize,
    pub fps: f64,
    pub expected: String,
    pub span: Option<[f64; 2]>,
    #[serde(default)]
    pub note: String,
}

pub fn load_corpus() -> Vec<CorpusCase> {
    let text = fs::read_to_string(fixture("parser_corpus.jsonl")).unwrap();
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

/// A smooth test pattern that differs per seed.
pub fn pattern(w: u32, h: u32, seed: u8) -> FrameImage {
    let mut px = Vec::with_capacity((w * h * 3) as usize);
    for y in 0..h {
        for x in 0..w {
            px.push(((x * 255) / w.max(1)) as u8 ^ seed);
            px.push(((y * 255) / h.max(1)) as u8);
            px.push(((x + y) % 256) as u8 / 2 + seed / 2);
        }
    }
    FrameImage::new(w, h, px).unwrap()
}

pub fn write_frames(dir: &Path, n: usize, w: u32, h: u32) -> Vec<PathBuf> {
    fs::create_dir_all(dir).unwrap();
    (0..n)
        .map(|i| {
            let p = dir.join(format!("frame_{i:06}.png"));
            save(&p, &pattern(w, h, i as u8)).unwrap();
            p
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    None,
    /// Answer 503 to the first request of every distinct body.
    FailOnce,
    /// Always answer with this status.
    Always(u16),
}

#[derive(Default)]
pub struct StubStats {
    pub in_flight: AtomicUsize,
    pub max_in_flight: AtomicUsize,
    pub requests: AtomicUsize,
    pub attempts: Mutex<HashMap<String, u32>>,
}

/// A minimal HTTP/1.1 server speaking just enough of the chat-completions
/// and embedding protocols for the client tests.
pub struct Stub {
    pub url: String,
    pub stats: Arc<StubStats>,
    stop: Arc<AtomicBool>,
    addr: std::net::SocketAddr,
}

impl Stub {
    pub fn start(fault: Fault, delay: Duration) -> Stub {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let stats = Arc::new(StubStats::default());
        let stop = Arc::new(AtomicBool::new(false));
        let (s, st) = (stats.clone(), stop.clone());
        thread::spawn(move || {
            for conn in listener.incoming() {
                if st.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(conn) = conn else { continue };
                let s = s.clone();
                thread::spawn(move || handle(conn, &s, fault, delay));
            }
        });
        Stub {
            url: format!("http://{addr}"),
            stats,
            stop,
            addr,
        }
    }

    pub fn requests(&self) -> usize {
        self.stats.requests.load(Ordering::SeqCst)
    }

    pub fn max_in_flight(&self) -> usize {
        self.stats.max_in_flight.load(Ordering::SeqCst)
    }

    pub fn attempt_counts(&self) -> Vec<u32> {
        self.stats.attempts.lock().unwrap().values().copied().collect()
    }
}

impl Drop for Stub {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
    }
}

fn sha(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Deterministic 16-dimensional vector for an embedding input.
pub fn stub_vector(input: &Value) -> Vec<f64> {
    sha(input.to_string().as_bytes())
        .as_bytes()
        .chunks(4)
        .map(|c| u32::from_str_radix(std::str::from_utf8(c).unwrap(), 16).unwrap() as f64 / 65535.0 - 0.5)
        .collect()
}

/// The answer the stub gives to a chat body: a span inside the frame count
/// that depends on the body.
pub fn stub_answer(body: &Value) -> String {
    let content = body["messages"][0]["content"].as_array().unwrap();
    let n = content.len() - 1;
    let h = sha(body.to_string().as_bytes());
    let a = usize::from_str_radix(&h[..4], 16).unwrap() % n;
    format!("From {a} to {}", n - 1)
}

fn handle(mut conn: TcpStream, stats: &StubStats, fault: Fault, delay: Duration) {
    let mut reader = BufReader::new(conn.try_clone().unwrap());
    let mut request_line = String::new();
    if reader.read_line(&mut request_line).unwrap_or(0) == 0 {
        return;
    }
    let path = request_line.split_whitespace().nth(1).unwrap_or("/").to_owned();
    let mut length = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                length = v.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0; length];
    if reader.read_exact(&mut body).is_err() {
        return;
    }

    let now = stats.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    stats.max_in_flight.fetch_max(now, Ordering::SeqCst);
    stats.requests.fetch_add(1, Ordering::SeqCst);
    thread::sleep(delay);

    let key = sha(&body);
    let attempt = {
        let mut map = stats.attempts.lock().unwrap();
        let n = map.entry(key).or_insert(0);
        *n += 1;
        *n
    };
    let json: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
    let (status, reply) = match fault {
        Fault::Always(code) => (code, json!({"error": "injected"})),
        Fault::FailOnce if attempt == 1 => (503, json!({"error": "try again"})),
        _ if path.starts_with("/embed") => (200, json!({"embedding": stub_vector(&json["input"])})),
        _ => (
            200,
            json!({"choices": [{"index": 0, "message": {"role": "assistant", "content": stub_answer(&json)}}]}),
        ),
    };
    stats.in_flight.fetch_sub(1, Ordering::SeqCst);
    let text = reply.to_string();
    let _ = write!(
        conn,
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
        text.len()
    );
    let _ = conn.flush();
}

/// Frames pinned by the golden images: the default design on a 336 px
/// pattern canvas.
pub fn golden_cases() -> Vec<(String, FrameImage)> {
    use numpro_core::overlay::{render_number, OverlayConfig};
    let config = OverlayConfig::default();
    [0u64, 7, 42, 315, 1999]
        .iter()
        .map(|&n| {
            let base = pattern(336, 336, (n % 251) as u8);
            (format!("default_{n}.png"), render_number(&base, n, &config).unwrap())
        })
        .collect()
}

/// Compares against `tests/fixtures/golden/<name>`, rewriting it when
/// `BLESS` is set. Returns a description of the mismatch, if any.
pub fn check_golden(name: &str, frame: &FrameImage) -> Result<(), String> {
    let path = fixture("golden").join(name);
    if std::env::var_os("BLESS").is_some() {
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        save(&path, frame).unwrap();
        return Ok(());
    }
    let pinned = numpro::frames::load(&path).map_err(|e| format!("{name}: {e}"))?;
    if (pinned.width(), pinned.height()) != (frame.width(), frame.height()) {
        return Err(format!("{name}: size differs"));
    }
    match pinned.pixels().iter().zip(frame.pixels()).position(|(a, b)| a != b) {
        None => Ok(()),
        Some(i) => Err(format!("{name}: first differing byte at {i}")),
    }
}
