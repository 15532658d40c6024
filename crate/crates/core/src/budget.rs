//! Wall-clock budget shared by the training loops.

use std::cell::Cell;
use std::time::Instant;

/// Seconds since some fixed origin.
pub trait Clock {
    fn now(&self) -> f64;
}

/// The process's monotonic clock.
#[derive(Debug, Clone, Copy)]
pub struct MonotonicClock {
    origin: Instant,
}

impl MonotonicClock {
    pub fn new() -> Self {
        MonotonicClock { origin: Instant::now() }
    }
}

impl Default for MonotonicClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for MonotonicClock {
    fn now(&self) -> f64 {
        self.origin.elapsed().as_secs_f64()
    }
}

/// Deterministic clock that advances by `tick` seconds on every read.
#[derive(Debug)]
pub struct SteppingClock {
    t: Cell<f64>,
    tick: f64,
}

impl SteppingClock {
    pub fn new(tick: f64) -> Self {
        SteppingClock {
            t: Cell::new(0.0),
            tick,
        }
    }
}

impl Clock for SteppingClock {
    fn now(&self) -> f64 {
        let t = self.t.get() + self.tick;
        self.t.set(t);
        t
    }
}

/// A time allowance measured from construction.
pub struct Budget<'c> {
    clock: &'c dyn Clock,
    start: f64,
    seconds: f64,
}

impl<'c> Budget<'c> {
    pub fn start(clock: &'c dyn Clock, seconds: f64) -> Self {
        Budget {
            start: clock.now(),
            clock,
            seconds,
        }
    }

    pub fn seconds(&self) -> f64 {
        self.seconds
    }

    pub fn elapsed(&self) -> f64 {
        self.clock.now() - self.start
    }

    pub fn remaining(&self) -> f64 {
        self.seconds - self.elapsed()
    }

    /// Whether a unit of work predicted to take `estimate` seconds still fits.
    pub fn fits(&self, estimate: f64) -> bool {
        estimate <= self.remaining()
    }

    pub fn exhausted(&self) -> bool {
        self.remaining() <= 0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stepping_clock_budget() {
        let clock = SteppingClock::new(1.0);
        let b = Budget::start(&clock, 3.0);
        assert!(b.fits(1.0)); // read at t=2, elapsed 1
        assert!(!b.fits(1.5)); // t=3, remaining 1
        assert!(b.exhausted()); // t=4
    }

    #[test]
    fn monotonic_is_nondecreasing() {
        let c = MonotonicClock::new();
        let a = c.now();
        assert!(c.now() >= a);
    }
}
