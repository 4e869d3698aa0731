use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

/// Shared monotone counter that orders events scheduled for the same tick.
#[derive(Debug, Clone, Default)]
pub struct Sequencer(Arc<AtomicU64>);

impl Sequencer {
    pub fn next(&self) -> u64 {
        self.0.fetch_add(1, Ordering::Relaxed)
    }
}
