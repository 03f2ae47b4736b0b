//! Exponential backoff with optional full jitter for remote calls.

use std::thread;
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    /// Total attempts including the first one.
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
    pub jitter: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            base_delay_ms: 500,
            max_delay_ms: 30_000,
            jitter: true,
        }
    }
}

impl RetryPolicy {
    /// No sleeping between attempts; used by tests and local stubs.
    pub fn immediate(max_attempts: u32) -> Self {
        RetryPolicy {
            max_attempts,
            base_delay_ms: 0,
            max_delay_ms: 0,
            jitter: false,
        }
    }

    /// Delay before retry number `retry` (0-based).
    pub fn delay(&self, retry: u32) -> Duration {
        let exp = self
            .base_delay_ms
            .saturating_mul(1u64.checked_shl(retry.min(32)).unwrap_or(u64::MAX));
        let capped = exp.min(self.max_delay_ms);
        let ms = if self.jitter && capped > 0 {
            rand::rng().random_range(0..=capped)
        } else {
            capped
        };
        Duration::from_millis(ms)
    }
}

/// Classification of a failed attempt.
#[derive(Debug)]
pub enum Attempt<E> {
    Transient(E),
    Permanent(E),
}

/// Error after the policy gave up.
#[derive(Debug)]
pub struct RetriesExhausted<E> {
    pub last: E,
    pub attempts: u32,
}

/// Runs `op` until it succeeds, fails permanently, or attempts run out.
/// On success returns the value and the number of retries that were needed.
pub fn retry<T, E>(
    policy: &RetryPolicy,
    mut op: impl FnMut(u32) -> Result<T, Attempt<E>>,
) -> Result<(T, u32), RetriesExhausted<E>> {
    let max = policy.max_attempts.max(1);
    let mut attempt = 0;
    loop {
        match op(attempt) {
            Ok(v) => return Ok((v, attempt)),
            Err(Attempt::Permanent(e)) => {
                return Err(RetriesExhausted {
                    last: e,
                    attempts: attempt + 1,
                })
            }
            Err(Attempt::Transient(e)) => {
                if attempt + 1 >= max {
                    return Err(RetriesExhausted {
                        last: e,
                        attempts: attempt + 1,
                    });
                }
                let d = policy.delay(attempt);
                if !d.is_zero() {
                    thread::sleep(d);
                }
                attempt += 1;
            }
        }
    }
}
