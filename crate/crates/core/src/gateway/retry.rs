//! Exponential backoff with jitter.

use std::time::Duration;

use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub base: Duration,
    pub factor: f64,
    /// Relative jitter; 0.2 scales each delay by a factor in [0.8, 1.2].
    pub jitter: f64,
    pub max: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            base: Duration::from_secs(1),
            factor: 2.0,
            jitter: 0.2,
            max: Duration::from_secs(60),
        }
    }
}

impl RetryPolicy {
    pub fn with_base(mut self, base: Duration) -> Self {
        self.base = base;
        self
    }

    /// Delay before retry number `retry` (0-based).
    ///
    /// Delays never decrease from one retry to the next as long as
    /// `factor * (1 - jitter) >= 1 + jitter`, which holds for the defaults.
    pub fn delay<R: Rng + ?Sized>(&self, retry: u32, rng: &mut R) -> Duration {
        let nominal = self.base.as_secs_f64() * self.factor.powi(retry.min(64) as i32);
        let scale = if self.jitter > 0.0 {
            rng.random_range(1.0 - self.jitter..=1.0 + self.jitter)
        } else {
            1.0
        };
        let secs = (nominal * scale).min(self.max.as_secs_f64());
        Duration::from_secs_f64(secs.max(0.0))
    }
}

/// Status codes worth retrying: timeouts, rate limits and server errors.
pub fn is_retryable_status(status: u16) -> bool {
    status == 408 || status == 429 || (500..600).contains(&status)
}
