use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

/// Shared handle to simulated time in milliseconds. Clones observe the same
/// clock; only the owner of the simulation should advance it.
#[derive(Debug, Clone, Default)]
pub struct VirtualClock(Arc<AtomicU64>);

impl VirtualClock {
    pub fn new(start_ms: u64) -> Self {
        VirtualClock(Arc::new(AtomicU64::new(start_ms)))
    }

    pub fn now_ms(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }

    /// Moves time forward; never backwards.
    pub fn advance_to(&self, t_ms: u64) {
        self.0.fetch_max(t_ms, Ordering::SeqCst);
    }

    pub fn advance_by(&self, delta_ms: u64) {
        self.0.fetch_add(delta_ms, Ordering::SeqCst);
    }
}
