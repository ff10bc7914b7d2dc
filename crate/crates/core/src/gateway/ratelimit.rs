//! Global sliding-window rate limiter.

use std::collections::VecDeque;

pub const WINDOW_MS: u64 = 60_000;

/// At most `limit` permits in any window `(t - 60 s, t]`.
#[derive(Debug, Clone)]
pub struct RateLimiter {
    limit: u32,
    dispatch_times: VecDeque<u64>,
}

impl RateLimiter {
    pub fn new(limit: u32) -> Self {
        RateLimiter { limit: limit.max(1), dispatch_times: VecDeque::new() }
    }

    pub fn limit(&self) -> u32 {
        self.limit
    }

    fn prune(&mut self, now_ms: u64) {
        while let Some(&t) = self.dispatch_times.front() {
            if t + WINDOW_MS <= now_ms {
                self.dispatch_times.pop_front();
            } else {
                break;
            }
        }
    }

    /// Permits currently counted in the window ending at `now_ms`.
    pub fn in_window(&mut self, now_ms: u64) -> usize {
        self.prune(now_ms);
        self.dispatch_times.len()
    }

    /// Records and grants a permit if the window has room.
    ///
    /// Time must not run backwards; an earlier `now_ms` is treated as the
    /// latest recorded dispatch time.
    pub fn try_acquire(&mut self, now_ms: u64) -> bool {
        let now = self.dispatch_times.back().map_or(now_ms, |&last| now_ms.max(last));
        self.prune(now);
        if self.dispatch_times.len() < self.limit as usize {
            self.dispatch_times.push_back(now);
            true
        } else {
            false
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ninth_and_tenth() {
        let mut r = RateLimiter::new(10);
        for i in 0..9 {
            assert!(r.try_acquire(1000 + i));
        }
        assert!(r.try_acquire(30_000));
        assert!(!r.try_acquire(30_001));
    }

    #[test]
    fn window_slides() {
        let mut r = RateLimiter::new(10);
        for _ in 0..10 {
            assert!(r.try_acquire(0));
        }
        assert!(!r.try_acquire(59_999));
        // exactly 60 s later the old permits fall out of (now-60s, now]
        assert!(r.try_acquire(60_000));
        let mut r = RateLimiter::new(10);
        for _ in 0..10 {
            r.try_acquire(0);
        }
        assert!(r.try_acquire(61_000));
    }
}
