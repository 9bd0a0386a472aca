use std::sync::Mutex;
use std::time::Duration;

use rand::Rng;
use tokio::time::Instant;

use super::config::BACKOFF_CAP;

/// Hands out request start slots at least `interval` apart.
#[derive(Debug)]
pub struct RateLimiter {
    interval: Duration,
    next_slot: Mutex<Option<Instant>>,
}

impl RateLimiter {
    pub fn new(interval: Duration) -> Self {
        Self {
            interval,
            next_slot: Mutex::new(None),
        }
    }

    pub fn per_minute(requests: u32) -> Self {
        Self::new(Duration::from_secs(60) / requests.max(1))
    }

    pub async fn acquire(&self) {
        let slot = {
            let mut next = self.next_slot.lock().unwrap();
            let now = Instant::now();
            let slot = match *next {
                Some(t) if t > now => t,
                _ => now,
            };
            *next = Some(slot + self.interval);
            slot
        };
        tokio::time::sleep_until(slot).await;
    }
}

/// Exponential backoff with full jitter: uniform in `[0, min(cap, base * 2^attempt)]`.
pub fn backoff_delay(attempt: u32, base: Duration) -> Duration {
    let ceiling = backoff_ceiling(attempt, base);
    ceiling.mul_f64(rand::rng().random::<f64>())
}

pub fn backoff_ceiling(attempt: u32, base: Duration) -> Duration {
    base.checked_mul(2u32.saturating_pow(attempt.min(31)))
        .unwrap_or(BACKOFF_CAP)
        .min(BACKOFF_CAP)
}
