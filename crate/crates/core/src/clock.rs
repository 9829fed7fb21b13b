use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

/// Source of Unix-second timestamps.
pub trait Clock: Send + Sync {
    fn now(&self) -> u64;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)
    }
}

/// Deterministic clock for tests and benchmarks.
///
/// Every call to `now` returns the current value and then advances it by
/// `step`. A step of zero freezes time until `set` or `advance` is called.
#[derive(Debug, Clone)]
pub struct TestClock {
    inner: Arc<TestClockInner>,
}

#[derive(Debug)]
struct TestClockInner {
    now: AtomicU64,
    step: u64,
}

impl TestClock {
    pub fn new(start: u64, step: u64) -> Self {
        Self {
            inner: Arc::new(TestClockInner {
                now: AtomicU64::new(start),
                step,
            }),
        }
    }

    /// A frozen clock.
    pub fn fixed(at: u64) -> Self {
        Self::new(at, 0)
    }

    pub fn set(&self, at: u64) {
        self.inner.now.store(at, Ordering::SeqCst);
    }

    pub fn advance(&self, secs: u64) {
        self.inner.now.fetch_add(secs, Ordering::SeqCst);
    }

    pub fn peek(&self) -> u64 {
        self.inner.now.load(Ordering::SeqCst)
    }
}

impl Clock for TestClock {
    fn now(&self) -> u64 {
        self.inner.now.fetch_add(self.inner.step, Ordering::SeqCst)
    }
}

impl<C: Clock + ?Sized> Clock for Arc<C> {
    fn now(&self) -> u64 {
        (**self).now()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn test_clock_is_monotone() {
        let c = TestClock::new(100, 5);
        assert_eq!(c.now(), 100);
        assert_eq!(c.now(), 105);
        c.advance(10);
        assert_eq!(c.now(), 120);
    }
}
