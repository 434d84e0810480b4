mod common;

use std::path::Path;
use std::time::Duration;

use common::{write_frames, Fault, Stub};
use numpro::client::{run_batch, BatchOptions, Decoding, EndpointConfig, HttpTransport, InferenceJob, JobError, ResponseCache};
use numpro::retry::RetryPolicy;
use numpro_core::prompt::Task;

fn jobs(dir: &Path, url: &str, count: usize) -> Vec<InferenceJob> {
    (0..count)
        .map(|i| InferenceJob {
            id: format!("job{i}"),
            frames: write_frames(&dir.join(format!("v{i}")), 2 + i % 3, 16, 16),
            task: Task::Moment,
            query: format!("query number {i}"),
            endpoint: EndpointConfig {
                url: format!("{url}/v1/chat/completions"),
                model: "stub".into(),
                api_key_env: None,
                timeout_s: 10,
            },
            decoding: Decoding::default(),
        })
        .collect()
}

fn fast_retry(max_attempts: u32) -> RetryPolicy {
    RetryPolicy {
        max_attempts,
        base_delay_ms: 5,
        max_delay_ms: 20,
    }
}

#[test]
fn in_flight_never_exceeds_the_bound() {
    let stub = Stub::start(Fault::None, Duration::from_millis(40));
    let dir = tempfile::tempdir().unwrap();
    let jobs = jobs(dir.path(), &stub.url, 12);
    let cache = ResponseCache::new(dir.path().join("cache"));
    let opts = BatchOptions { max_in_flight: 3, retry: fast_retry(2), ..Default::default() };
    let out = run_batch(&jobs, &HttpTransport::new(Duration::from_secs(10)), &cache, &opts).unwrap();
    assert_eq!(stub.requests(), 12);
    assert!(stub.max_in_flight() <= 3, "saw {}", stub.max_in_flight());
    assert!(stub.max_in_flight() >= 2, "workers did not overlap");
    for (i, r) in out.iter().enumerate() {
        assert_eq!(r.id, format!("job{i}"));
        assert!(r.outcome.as_ref().unwrap().raw_text.starts_with("From "));
    }
}

#[test]
fn bound_of_one_is_sequential() {
    let stub = Stub::start(Fault::None, Duration::from_millis(10));
    let dir = tempfile::tempdir().unwrap();
    let jobs = jobs(dir.path(), &stub.url, 5);
    let cache = ResponseCache::new(dir.path().join("cache"));
    let opts = BatchOptions { max_in_flight: 1, ..Default::default() };
    run_batch(&jobs, &HttpTransport::new(Duration::from_secs(10)), &cache, &opts).unwrap();
    assert_eq!(stub.max_in_flight(), 1);
}

#[test]
fn one_transient_failure_costs_one_retry() {
    let stub = Stub::start(Fault::FailOnce, Duration::ZERO);
    let dir = tempfile::tempdir().unwrap();
    let jobs = jobs(dir.path(), &stub.url, 6);
    let cache = ResponseCache::new(dir.path().join("cache"));
    let opts = BatchOptions { max_in_flight: 3, retry: fast_retry(4), ..Default::default() };
    let out = run_batch(&jobs, &HttpTransport::new(Duration::from_secs(10)), &cache, &opts).unwrap();
    for r in &out {
        assert_eq!(r.outcome.as_ref().unwrap().attempts, 2, "{}", r.id);
    }
    assert_eq!(stub.attempt_counts(), vec![2; 6]);
}

#[test]
fn warm_cache_replays_without_network() {
    let dir = tempfile::tempdir().unwrap();
    let cache = ResponseCache::new(dir.path().join("cache"));
    let opts = BatchOptions { max_in_flight: 4, ..Default::default() };
    let (first, url) = {
        let stub = Stub::start(Fault::None, Duration::ZERO);
        let jobs = jobs(dir.path(), &stub.url, 8);
        let out = run_batch(&jobs, &HttpTransport::new(Duration::from_secs(10)), &cache, &opts).unwrap();
        (out, stub.url.clone())
    };
    // same frames and prompts, endpoint now refusing everything
    let cold = Stub::start(Fault::Always(500), Duration::ZERO);
    let mut replay_jobs = jobs(dir.path(), &url, 8);
    for j in &mut replay_jobs {
        j.endpoint.url = format!("{}/v1/chat/completions", cold.url);
    }
    let second = run_batch(&replay_jobs, &HttpTransport::new(Duration::from_secs(10)), &cache, &opts).unwrap();
    assert_eq!(cold.requests(), 0);
    for (a, b) in first.iter().zip(&second) {
        let (a, b) = (a.outcome.as_ref().unwrap(), b.outcome.as_ref().unwrap());
        assert_eq!(a.raw_text.as_bytes(), b.raw_text.as_bytes());
        assert!(b.cached);
    }
}

#[test]
fn permanent_and_oversized_failures_are_job_records() {
    let stub = Stub::start(Fault::Always(400), Duration::ZERO);
    let dir = tempfile::tempdir().unwrap();
    let jobs = jobs(dir.path(), &stub.url, 2);
    let cache = ResponseCache::new(dir.path().join("cache"));
    let opts = BatchOptions { max_in_flight: 2, retry: fast_retry(3), ..Default::default() };
    let out = run_batch(&jobs, &HttpTransport::new(Duration::from_secs(10)), &cache, &opts).unwrap();
    for r in &out {
        assert!(matches!(r.outcome, Err(JobError::Endpoint { attempts: 1, .. })), "{:?}", r.outcome);
    }

    let too_large = Stub::start(Fault::Always(413), Duration::ZERO);
    let mut big = jobs.clone();
    for j in &mut big {
        j.endpoint.url = too_large.url.clone();
    }
    let out = run_batch(&big, &HttpTransport::new(Duration::from_secs(10)), &cache, &opts).unwrap();
    let err = out[0].outcome.as_ref().unwrap_err();
    assert!(matches!(err, JobError::TooLarge { detail: Some(_), .. }), "{err}");
    assert!(err.to_string().contains("bytes"), "{err}");
}

#[test]
fn transient_failures_stop_at_the_attempt_cap() {
    let stub = Stub::start(Fault::Always(503), Duration::ZERO);
    let dir = tempfile::tempdir().unwrap();
    let jobs = jobs(dir.path(), &stub.url, 1);
    let cache = ResponseCache::new(dir.path().join("cache"));
    let opts = BatchOptions { max_in_flight: 1, retry: fast_retry(3), ..Default::default() };
    let out = run_batch(&jobs, &HttpTransport::new(Duration::from_secs(10)), &cache, &opts).unwrap();
    assert!(matches!(out[0].outcome, Err(JobError::Endpoint { attempts: 3, .. })));
    assert_eq!(stub.requests(), 3);
}

#[test]
fn transcripts_record_digests_not_payloads() {
    let stub = Stub::start(Fault::None, Duration::ZERO);
    let dir = tempfile::tempdir().unwrap();
    let jobs = jobs(dir.path(), &stub.url, 1);
    let cache = ResponseCache::new(dir.path().join("cache"));
    let opts = BatchOptions {
        max_in_flight: 1,
        transcripts: Some(dir.path().join("t")),
        ..Default::default()
    };
    run_batch(&jobs, &HttpTransport::new(Duration::from_secs(10)), &cache, &opts).unwrap();
    let t: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("t/job0.json")).unwrap()).unwrap();
    assert_eq!(t["attempts"], 1);
    assert_eq!(t["frames"].as_array().unwrap().len(), 2);
    assert!(!t.to_string().contains("base64"));
}
