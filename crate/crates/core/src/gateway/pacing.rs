//! Time source, sliding-window rate limiting and retry backoff.

use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use rand::Rng;

pub trait Clock: Send + Sync {
    /// Monotonic time since an arbitrary origin.
    fn elapsed(&self) -> Duration;
    fn sleep(&self, d: Duration);
    fn utc_now(&self) -> DateTime<Utc>;
}

#[derive(Debug)]
pub struct SystemClock {
    origin: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        Self {
            origin: Instant::now(),
        }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn elapsed(&self) -> Duration {
        self.origin.elapsed()
    }

    fn sleep(&self, d: Duration) {
        std::thread::sleep(d)
    }

    fn utc_now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Virtual clock: `sleep` advances time instantly. Used by tests and offline runs.
#[derive(Debug)]
pub struct ManualClock {
    origin: DateTime<Utc>,
    elapsed: Mutex<Duration>,
    slept: Mutex<Vec<Duration>>,
}

impl ManualClock {
    pub fn new(origin: DateTime<Utc>) -> Self {
        Self {
            origin,
            elapsed: Mutex::new(Duration::ZERO),
            slept: Mutex::new(Vec::new()),
        }
    }

    pub fn advance(&self, d: Duration) {
        *self.elapsed.lock().expect("clock lock") += d;
    }

    /// Every duration passed to `sleep`, in call order.
    pub fn sleeps(&self) -> Vec<Duration> {
        self.slept.lock().expect("clock lock").clone()
    }
}

impl Clock for ManualClock {
    fn elapsed(&self) -> Duration {
        *self.elapsed.lock().expect("clock lock")
    }

    fn sleep(&self, d: Duration) {
        self.slept.lock().expect("clock lock").push(d);
        self.advance(d);
    }

    fn utc_now(&self) -> DateTime<Utc> {
        self.origin + chrono::Duration::from_std(self.elapsed()).expect("elapsed fits")
    }
}

/// Admits at most `limit` requests in any half-open window of length `window`.
#[derive(Debug)]
pub struct RateLimiter {
    limit: usize,
    window: Duration,
    issued: Mutex<VecDeque<Duration>>,
}

impl RateLimiter {
    /// `per_minute == 0` disables limiting.
    pub fn per_minute(per_minute: u32) -> Self {
        Self::new(per_minute as usize, Duration::from_secs(60))
    }

    pub fn new(limit: usize, window: Duration) -> Self {
        Self {
            limit,
            window,
            issued: Mutex::new(VecDeque::new()),
        }
    }

    /// Blocks (through `clock`) until a request may be issued, then records it.
    pub fn acquire(&self, clock: &dyn Clock) -> Duration {
        if self.limit == 0 {
            return clock.elapsed();
        }
        loop {
            let wait = {
                let mut issued = self.issued.lock().expect("limiter lock");
                let now = clock.elapsed();
                while issued.front().is_some_and(|t| *t + self.window <= now) {
                    issued.pop_front();
                }
                if issued.len() < self.limit {
                    issued.push_back(now);
                    return now;
                }
                *issued.front().expect("non-empty at limit") + self.window - now
            };
            clock.sleep(wait);
        }
    }
}

/// Exponential backoff with equal jitter: the delay for attempt `n` lies in
/// `[d/2, d]` where `d = min(cap, base * 2^n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base: Duration,
    pub cap: Duration,
}

impl RetryPolicy {
    pub fn new(max_retries: u32) -> Self {
        Self {
            max_retries,
            base: Duration::from_secs(1),
            cap: Duration::from_secs(60),
        }
    }

    pub fn ceiling(&self, attempt: u32) -> Duration {
        let factor = 2u32.saturating_pow(attempt.min(31));
        self.base.saturating_mul(factor).min(self.cap)
    }

    pub fn delay(&self, attempt: u32) -> Duration {
        let ceiling = self.ceiling(attempt);
        let half = ceiling / 2;
        let spread = (ceiling - half).as_nanos() as u64;
        let jitter = if spread == 0 {
            0
        } else {
            rand::thread_rng().gen_range(0..=spread)
        };
        half + Duration::from_nanos(jitter)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn clock() -> ManualClock {
        ManualClock::new(
            DateTime::parse_from_rfc3339("2024-01-01T00:00:00Z")
                .unwrap()
                .into(),
        )
    }

    #[test]
    fn unlimited_never_sleeps() {
        let c = clock();
        let l = RateLimiter::per_minute(0);
        for _ in 0..1000 {
            l.acquire(&c);
        }
        assert!(c.sleeps().is_empty());
    }

    #[test]
    fn waits_for_window_to_clear() {
        let c = clock();
        let l = RateLimiter::per_minute(2);
        assert_eq!(l.acquire(&c), Duration::ZERO);
        c.advance(Duration::from_secs(10));
        l.acquire(&c);
        let third = l.acquire(&c);
        assert_eq!(third, Duration::from_secs(60));
    }

    proptest! {
        #[test]
        fn window_never_exceeds_limit(limit in 1usize..8, gaps in prop::collection::vec(0u64..30_000, 1..60)) {
            let c = clock();
            let l = RateLimiter::new(limit, Duration::from_secs(60));
            let mut issued = Vec::new();
            for g in gaps {
                c.advance(Duration::from_millis(g));
                issued.push(l.acquire(&c));
            }
            for (i, t) in issued.iter().enumerate() {
                let in_window = issued[i..].iter().filter(|u| **u < *t + Duration::from_secs(60)).count();
                prop_assert!(in_window <= limit);
            }
        }
    }

    #[test]
    fn backoff_is_bounded_and_capped() {
        let p = RetryPolicy::new(10);
        assert_eq!(p.ceiling(0), Duration::from_secs(1));
        assert_eq!(p.ceiling(3), Duration::from_secs(8));
        assert_eq!(p.ceiling(6), Duration::from_secs(60));
        assert_eq!(p.ceiling(40), Duration::from_secs(60));
        for attempt in 0..12 {
            let d = p.delay(attempt);
            assert!(d >= p.ceiling(attempt) / 2 && d <= p.ceiling(attempt));
        }
    }
}
