use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ProviderError;

/// Bounded exponential backoff with optional jitter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    /// Total attempts including the first.
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
    pub jitter: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay_ms: 500,
            max_delay_ms: 8_000,
            jitter: true,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (0-based), without jitter.
    pub fn backoff(&self, retry: u32) -> Duration {
        let exp = self
            .base_delay_ms
            .saturating_mul(1u64.checked_shl(retry).unwrap_or(u64::MAX));
        Duration::from_millis(exp.min(self.max_delay_ms))
    }

    fn delay_with_jitter(&self, retry: u32, rng: &mut impl Rng) -> Duration {
        let base = self.backoff(retry);
        if !self.jitter || base.is_zero() {
            return base;
        }
        // Full jitter in [base/2, base].
        let ms = base.as_millis() as u64;
        Duration::from_millis(rng.gen_range(ms / 2..=ms))
    }
}

/// Runs `op` until it succeeds, fails non-transiently, or attempts run out.
/// `sleep` is injected so tests can observe delays without waiting.
pub fn with_retry<T>(
    policy: &RetryPolicy,
    mut sleep: impl FnMut(Duration),
    mut op: impl FnMut(u32) -> Result<T, ProviderError>,
) -> Result<T, ProviderError> {
    let attempts = policy.max_attempts.max(1);
    let mut rng = rand::thread_rng();
    let mut attempt = 0;
    loop {
        match op(attempt) {
            Ok(v) => return Ok(v),
            Err(e) if e.is_transient() && attempt + 1 < attempts => {
                let delay = policy.delay_with_jitter(attempt, &mut rng);
                tracing::warn!(attempt = attempt + 1, error = %e, ?delay, "retrying model call");
                sleep(delay);
                attempt += 1;
            }
            Err(e) => return Err(e),
        }
    }
}
