use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use chrono::{DateTime, Duration, Utc};

/// Monotonic reading for ordering plus wall clock for reading-time sums.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Timestamp {
    pub mono_ns: u64,
    pub wall: DateTime<Utc>,
}

pub trait Clock: Send + Sync {
    fn now(&self) -> Timestamp;
}

#[derive(Debug)]
/// Monotonic readings are anchored at the wall clock on construction, so
/// they keep increasing across restarts unless the wall clock jumps back.
pub struct SystemClock {
    origin: Instant,
    anchor_ns: u64,
}

impl Default for SystemClock {
    fn default() -> Self {
        let anchor_ns = Utc::now().timestamp_nanos_opt().unwrap_or(0).max(0) as u64;
        Self { origin: Instant::now(), anchor_ns }
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Timestamp {
        Timestamp {
            mono_ns: self.anchor_ns + self.origin.elapsed().as_nanos() as u64,
            wall: Utc::now(),
        }
    }
}

/// Deterministic clock: every reading advances by a fixed step.
#[derive(Debug)]
pub struct SteppingClock {
    start: DateTime<Utc>,
    step_ms: u64,
    ticks: AtomicU64,
}

impl SteppingClock {
    pub fn new(start: DateTime<Utc>, step_ms: u64) -> Self {
        Self { start, step_ms, ticks: AtomicU64::new(0) }
    }

    pub fn fixture() -> Self {
        Self::new(DateTime::parse_from_rfc3339("2024-05-01T09:00:00Z").expect("valid").with_timezone(&Utc), 1000)
    }
}

impl Clock for SteppingClock {
    fn now(&self) -> Timestamp {
        let t = self.ticks.fetch_add(1, Ordering::SeqCst);
        let elapsed_ms = t * self.step_ms;
        Timestamp {
            mono_ns: elapsed_ms * 1_000_000,
            wall: self.start + Duration::milliseconds(elapsed_ms as i64),
        }
    }
}
