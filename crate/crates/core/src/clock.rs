//! Time sources shared by every component.
//!
//! All timestamps in this crate are microseconds since the start of a run.
//! [`SimClock`] only moves when the discrete-event engine advances it, which is
//! what makes simulated runs reproducible; [`WallClock`] follows `Instant`.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

/// Microseconds since the start of a run.
pub type Micros = u64;

pub trait Clock: Send + Sync {
    fn now_us(&self) -> Micros;
}

/// Virtual clock driven by the simulation engine.
#[derive(Debug, Default)]
pub struct SimClock {
    now: AtomicU64,
}

impl SimClock {
    pub fn new() -> Self {
        Self::default()
    }

    /// Moves the clock forward. Going backwards is a bug in the caller.
    pub fn advance_to(&self, t: Micros) {
        let prev = self.now.swap(t, Ordering::SeqCst);
        debug_assert!(t >= prev, "clock moved backwards: {prev} -> {t}");
    }
}

impl Clock for SimClock {
    fn now_us(&self) -> Micros {
        self.now.load(Ordering::SeqCst)
    }
}

#[derive(Debug)]
pub struct WallClock {
    start: Instant,
}

impl WallClock {
    pub fn new() -> Self {
        Self {
            start: Instant::now(),
        }
    }

    pub fn instant_at(&self, t: Micros) -> Instant {
        self.start + Duration::from_micros(t)
    }
}

impl Default for WallClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for WallClock {
    fn now_us(&self) -> Micros {
        self.start.elapsed().as_micros() as Micros
    }
}

pub fn micros(d: Duration) -> Micros {
    d.as_micros() as Micros
}

/// A delay distribution, sampled from a seeded generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Delay {
    Fixed(Micros),
    Uniform { min: Micros, max: Micros },
}

impl Delay {
    pub fn sample(&self, rng: &mut impl rand::Rng) -> Micros {
        match *self {
            Delay::Fixed(d) => d,
            Delay::Uniform { min, max } if max > min => rng.gen_range(min..=max),
            Delay::Uniform { min, .. } => min,
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Delay::Fixed(d) => d as f64,
            Delay::Uniform { min, max } => (min + max.max(min)) as f64 / 2.0,
        }
    }
}
