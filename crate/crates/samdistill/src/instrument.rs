//! Per-thread invocation counters.
//!
//! They let tests and the `eval` command prove which components a code
//! path touched. Counters are thread-local so concurrent tests do not see
//! each other's activity.

use std::cell::Cell;

thread_local! {
    static SEGMENTER_CALLS: Cell<u64> = const { Cell::new(0) };
    static REFINER_FORWARDS: Cell<u64> = const { Cell::new(0) };
    static PERCEPTUAL_BUILDS: Cell<u64> = const { Cell::new(0) };
}

/// Snapshot of the counters on the current thread.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Counters {
    pub segmenter_calls: u64,
    pub refiner_forwards: u64,
    pub perceptual_builds: u64,
}

impl Counters {
    pub fn now() -> Self {
        Self {
            segmenter_calls: SEGMENTER_CALLS.with(Cell::get),
            refiner_forwards: REFINER_FORWARDS.with(Cell::get),
            perceptual_builds: PERCEPTUAL_BUILDS.with(Cell::get),
        }
    }

    /// Activity since `earlier`.
    pub fn since(earlier: Self) -> Self {
        let now = Self::now();
        Self {
            segmenter_calls: now.segmenter_calls - earlier.segmenter_calls,
            refiner_forwards: now.refiner_forwards - earlier.refiner_forwards,
            perceptual_builds: now.perceptual_builds - earlier.perceptual_builds,
        }
    }
}

fn bump(cell: &'static std::thread::LocalKey<Cell<u64>>) {
    cell.with(|c| c.set(c.get() + 1));
}

pub(crate) fn segmenter_called() {
    bump(&SEGMENTER_CALLS);
}

pub(crate) fn refiner_forwarded() {
    bump(&REFINER_FORWARDS);
}

pub(crate) fn perceptual_built() {
    bump(&PERCEPTUAL_BUILDS);
}
