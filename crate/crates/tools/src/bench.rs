//! Timing wrapper around a tracker, for throughput reporting.

use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::time::Instant;

use quadtrack_core::data::SequenceSource;
use quadtrack_core::track::Tracker;
use quadtrack_core::{BoundingBox, Result};

pub struct TimedTracker<T> {
    inner: T,
    frames: AtomicUsize,
    nanos: AtomicU64,
}

impl<T> TimedTracker<T> {
    pub fn new(inner: T) -> Self {
        TimedTracker {
            inner,
            frames: AtomicUsize::new(0),
            nanos: AtomicU64::new(0),
        }
    }

    /// Frames per CPU-second across all runs so far.
    pub fn fps(&self) -> Option<f64> {
        let frames = self.frames.load(Ordering::Relaxed);
        let nanos = self.nanos.load(Ordering::Relaxed);
        (nanos > 0).then(|| frames as f64 / (nanos as f64 * 1e-9))
    }
}

impl<T: Tracker> Tracker for TimedTracker<T> {
    fn track(
        &self,
        seq: &dyn SequenceSource,
        init: BoundingBox,
        start: usize,
        len: usize,
    ) -> Result<Vec<BoundingBox>> {
        let t0 = Instant::now();
        let out = self.inner.track(seq, init, start, len)?;
        self.nanos
            .fetch_add(t0.elapsed().as_nanos() as u64, Ordering::Relaxed);
        self.frames.fetch_add(out.len(), Ordering::Relaxed);
        Ok(out)
    }
}
