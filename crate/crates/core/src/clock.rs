//! Process-wide microsecond clock.
//!
//! Readings are monotonic within a process. The epoch is the wall-clock time
//! at first use, so readings from processes on the same host line up closely
//! enough for merged timelines.

use std::sync::OnceLock;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

struct Anchor {
    instant: Instant,
    unix_us: u64,
}

static ANCHOR: OnceLock<Anchor> = OnceLock::new();

fn anchor() -> &'static Anchor {
    ANCHOR.get_or_init(|| Anchor {
        instant: Instant::now(),
        unix_us: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_micros() as u64)
            .unwrap_or(0),
    })
}

/// Current time in integer microseconds.
pub fn now_us() -> u64 {
    let a = anchor();
    a.unix_us + a.instant.elapsed().as_micros() as u64
}
