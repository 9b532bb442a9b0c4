use std::time::{Duration, Instant};

/// Deficit token bucket measured in bytes.
///
/// A reservation may overdraw the bucket; the returned wait is the time
/// until the balance is back at zero. Over any span the bytes reserved
/// never exceed `burst + rate * span`.
#[derive(Debug, Clone)]
pub struct TokenBucket {
    bytes_per_second: f64,
    burst_bytes: f64,
    balance: f64,
    last: Instant,
}

impl TokenBucket {
    pub fn new(rate_mbps: f64, burst_bytes: usize, now: Instant) -> Self {
        TokenBucket {
            bytes_per_second: rate_mbps * 1e6 / 8.0,
            burst_bytes: burst_bytes as f64,
            balance: burst_bytes as f64,
            last: now,
        }
    }

    pub fn rate_mbps(&self) -> f64 {
        self.bytes_per_second * 8.0 / 1e6
    }

    fn refill(&mut self, now: Instant) {
        let dt = now.saturating_duration_since(self.last).as_secs_f64();
        self.last = now;
        self.balance = (self.balance + dt * self.bytes_per_second).min(self.burst_bytes);
    }

    /// Debits `bytes` and returns how long the caller must wait before the
    /// balance is nonnegative again.
    pub fn reserve(&mut self, bytes: usize, now: Instant) -> Duration {
        self.refill(now);
        self.balance -= bytes as f64;
        if self.balance >= 0.0 {
            Duration::ZERO
        } else {
            Duration::from_secs_f64(-self.balance / self.bytes_per_second)
        }
    }
}
