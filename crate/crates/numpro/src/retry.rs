use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

/// Exponential backoff: attempt `k` (1-based) that fails transiently waits
/// `base * 2^(k-1)`, capped at `max_delay`, before attempt `k + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 4,
            base_delay_ms: 500,
            max_delay_ms: 30_000,
        }
    }
}

/// Outcome of one attempt, as seen by [`RetryPolicy::run`].
pub enum Attempt<T, E> {
    Done(T),
    Retry(E),
    Fail(E),
}

impl RetryPolicy {
    pub fn delay(&self, attempt: u32) -> Duration {
        let factor = 1u64.checked_shl(attempt.saturating_sub(1)).unwrap_or(u64::MAX);
        Duration::from_millis(self.base_delay_ms.saturating_mul(factor).min(self.max_delay_ms))
    }

    /// Runs `op` until it succeeds, fails permanently or runs out of attempts.
    /// Returns the result and the number of attempts made.
    pub fn run<T, E>(&self, mut op: impl FnMut(u32) -> Attempt<T, E>) -> (Result<T, E>, u32) {
        let max = self.max_attempts.max(1);
        let mut attempt = 1;
        loop {
            match op(attempt) {
                Attempt::Done(v) => return (Ok(v), attempt),
                Attempt::Fail(e) => return (Err(e), attempt),
                Attempt::Retry(e) if attempt >= max => return (Err(e), attempt),
                Attempt::Retry(_) => {
                    thread::sleep(self.delay(attempt));
                    attempt += 1;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles_and_caps() {
        let p = RetryPolicy { max_attempts: 5, base_delay_ms: 100, max_delay_ms: 350 };
        let ms: Vec<_> = (1..=4).map(|k| p.delay(k).as_millis()).collect();
        assert_eq!(ms, vec![100, 200, 350, 350]);
        assert_eq!(p.delay(200).as_millis(), 350);
    }

    #[test]
    fn stops_on_success_or_permanent_failure() {
        let p = RetryPolicy { max_attempts: 3, base_delay_ms: 0, max_delay_ms: 0 };
        let (r, n) = p.run(|k| if k < 2 { Attempt::Retry("busy") } else { Attempt::Done(k) });
        assert_eq!((r, n), (Ok(2), 2));
        let (r, n) = p.run(|_| Attempt::<(), _>::Retry("busy"));
        assert_eq!((r, n), (Err("busy"), 3));
        let (r, n) = p.run(|_| Attempt::<(), _>::Fail("bad request"));
        assert_eq!((r, n), (Err("bad request"), 1));
    }
}
