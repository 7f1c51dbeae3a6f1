use std::collections::VecDeque;
use std::time::{Duration, Instant};

use parking_lot::Mutex;

/// Sliding-window limiter: at most `capacity` acquisitions in any window of
/// `window` length. A fractional rate below one per second widens the window.
#[derive(Debug)]
pub struct RateLimiter {
    capacity: usize,
    window: Duration,
    calls: Mutex<VecDeque<Instant>>,
}

impl RateLimiter {
    pub fn per_second(rate: f64) -> Self {
        assert!(rate > 0.0, "rate must be positive");
        let capacity = rate.floor().max(1.0) as usize;
        let window = Duration::from_secs_f64(capacity as f64 / rate);
        RateLimiter {
            capacity,
            window,
            calls: Mutex::new(VecDeque::with_capacity(capacity)),
        }
    }

    /// Blocks until a slot is free, then takes it.
    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut calls = self.calls.lock();
                let now = Instant::now();
                while calls.front().is_some_and(|t| now.duration_since(*t) >= self.window) {
                    calls.pop_front();
                }
                if calls.len() < self.capacity {
                    calls.push_back(now);
                    return;
                }
                self.window - now.duration_since(*calls.front().expect("full window"))
            };
            std::thread::sleep(wait);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn never_exceeds_rate_in_any_window() {
        let limiter = RateLimiter::per_second(20.0);
        let mut stamps = Vec::new();
        for _ in 0..50 {
            limiter.acquire();
            stamps.push(Instant::now());
        }
        for (i, start) in stamps.iter().enumerate() {
            let in_window = stamps[i..]
                .iter()
                .take_while(|t| t.duration_since(*start) < Duration::from_secs(1))
                .count();
            assert!(in_window <= 20, "{in_window} calls within one second");
        }
    }
}
