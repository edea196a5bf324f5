//! Time sources for latency accounting.
//!
//! Live sessions use [`WallClock`]. Replays that must produce identical
//! reports run on a [`SimulatedClock`], where time only moves when a
//! component explicitly spends it (for example the mock backend's configured
//! per-call latency).

use std::fmt::Debug;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

pub trait Clock: Send + Sync + Debug {
    /// Monotonic time since the clock's origin.
    fn now(&self) -> Duration;
    /// Milliseconds since the Unix epoch.
    fn wall_ms(&self) -> u64;
    /// Spend `d`: sleeps on a wall clock, advances a simulated one.
    fn pause(&self, d: Duration);
}

#[derive(Debug, Clone)]
pub struct WallClock {
    origin: Instant,
}

impl WallClock {
    pub fn new() -> Self {
        Self { origin: Instant::now() }
    }
}

impl Default for WallClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for WallClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }

    fn wall_ms(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }

    fn pause(&self, d: Duration) {
        if !d.is_zero() {
            std::thread::sleep(d);
        }
    }
}

#[derive(Debug)]
pub struct SimulatedClock {
    epoch_ms: u64,
    elapsed_us: AtomicU64,
}

impl SimulatedClock {
    pub fn new(epoch_ms: u64) -> Self {
        Self {
            epoch_ms,
            elapsed_us: AtomicU64::new(0),
        }
    }

    pub fn advance(&self, d: Duration) {
        self.elapsed_us.fetch_add(d.as_micros() as u64, Ordering::SeqCst);
    }
}

impl Clock for SimulatedClock {
    fn now(&self) -> Duration {
        Duration::from_micros(self.elapsed_us.load(Ordering::SeqCst))
    }

    fn wall_ms(&self) -> u64 {
        self.epoch_ms + self.now().as_millis() as u64
    }

    fn pause(&self, d: Duration) {
        self.advance(d);
    }
}

/// Whole milliseconds, rounded up so that any non-zero span counts as at
/// least one.
pub fn ceil_ms(d: Duration) -> u64 {
    d.as_nanos().div_ceil(1_000_000) as u64
}
