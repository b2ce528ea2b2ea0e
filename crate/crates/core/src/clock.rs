//! Injectable logical clock.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use chrono::{DateTime, SecondsFormat, Utc};

/// 2025-01-01T00:00:00Z, the instant logical time zero maps to.
pub const EPOCH_UNIX_SECONDS: i64 = 1_735_689_600;

/// Monotonic logical time in seconds. Clones share the same counter.
#[derive(Debug, Clone, Default)]
pub struct LogicalClock(Arc<AtomicU64>);

impl LogicalClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn starting_at(t: u64) -> Self {
        Self(Arc::new(AtomicU64::new(t)))
    }

    pub fn now(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }

    /// Advances by one second and returns the new time.
    pub fn tick(&self) -> u64 {
        self.advance(1)
    }

    pub fn advance(&self, secs: u64) -> u64 {
        self.0.fetch_add(secs, Ordering::SeqCst) + secs
    }
}

/// ISO-8601 UTC rendering of a logical timestamp.
pub fn iso8601(t: u64) -> String {
    let secs = EPOCH_UNIX_SECONDS.saturating_add(i64::try_from(t).unwrap_or(i64::MAX / 2));
    DateTime::<Utc>::from_timestamp(secs, 0)
        .unwrap_or(DateTime::<Utc>::MAX_UTC)
        .to_rfc3339_opts(SecondsFormat::Secs, true)
}
