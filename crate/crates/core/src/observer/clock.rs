use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

/// Monotone cycle source read by the observer.
pub trait CycleCounter: Send + Sync {
    fn now(&self) -> u64;
}

/// Wall-clock counter mapping a monotonic nanosecond clock to cycles at a
/// fixed rate. Stands in for RDTSCP, which is not portable.
#[derive(Clone, Debug)]
pub struct MonotonicCounter {
    origin: Instant,
    cycles_per_ns: f64,
}

impl MonotonicCounter {
    pub fn new(cycles_per_ns: f64) -> Self {
        MonotonicCounter { origin: Instant::now(), cycles_per_ns }
    }
}

impl Default for MonotonicCounter {
    fn default() -> Self {
        // A 2.4 GHz part.
        MonotonicCounter::new(2.4)
    }
}

impl CycleCounter for MonotonicCounter {
    fn now(&self) -> u64 {
        (self.origin.elapsed().as_nanos() as f64 * self.cycles_per_ns) as u64
    }
}

/// Deterministic clock that only moves when told to. Never runs backwards.
#[derive(Clone, Debug, Default)]
pub struct VirtualClock(Arc<AtomicU64>);

impl VirtualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn advance(&self, cycles: u64) -> u64 {
        self.0.fetch_add(cycles, Ordering::AcqRel) + cycles
    }

    /// Moves the clock to `t` if that is later than the current reading.
    pub fn set(&self, t: u64) {
        self.0.fetch_max(t, Ordering::AcqRel);
    }
}

impl CycleCounter for VirtualClock {
    fn now(&self) -> u64 {
        self.0.load(Ordering::Acquire)
    }
}
