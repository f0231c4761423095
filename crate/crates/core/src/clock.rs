//! Time sources shared by the executor and the simulated brick.
//!
//! [`SystemClock`] follows the wall clock. [`VirtualClock`] only moves when
//! something waits on it, which lets whole programs run instantly and
//! deterministically against the simulator.

use std::fmt::Debug;
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex};

pub trait Clock: Send + Sync + Debug {
    /// Time elapsed since the clock's origin.
    fn now(&self) -> Duration;

    /// Waits for `dur` or until `cancel` fires. Returns `true` if the full
    /// duration elapsed.
    fn wait(&self, dur: Duration, cancel: &CancelToken) -> bool;
}

#[derive(Debug)]
pub struct SystemClock {
    origin: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        SystemClock { origin: Instant::now() }
    }

    pub fn shared() -> Arc<dyn Clock> {
        Arc::new(Self::new())
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }

    fn wait(&self, dur: Duration, cancel: &CancelToken) -> bool {
        cancel.wait_timeout(dur)
    }
}

/// Manually advanced clock. `wait` advances time by the requested amount
/// unless the token is already cancelled.
#[derive(Debug, Default)]
pub struct VirtualClock {
    now: Mutex<Duration>,
}

impl VirtualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn advance(&self, dur: Duration) {
        *self.now.lock() += dur;
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> Duration {
        *self.now.lock()
    }

    fn wait(&self, dur: Duration, cancel: &CancelToken) -> bool {
        if cancel.is_cancelled() {
            return false;
        }
        self.advance(dur);
        true
    }
}

#[derive(Debug, Default)]
struct TokenState {
    cancelled: Mutex<bool>,
    cond: Condvar,
}

/// Cloneable cancellation flag that wakes anyone blocked in
/// [`CancelToken::wait_timeout`].
#[derive(Debug, Clone, Default)]
pub struct CancelToken {
    inner: Arc<TokenState>,
}

impl CancelToken {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cancel(&self) {
        let mut c = self.inner.cancelled.lock();
        *c = true;
        self.inner.cond.notify_all();
    }

    pub fn is_cancelled(&self) -> bool {
        *self.inner.cancelled.lock()
    }

    pub fn reset(&self) {
        *self.inner.cancelled.lock() = false;
    }

    /// Blocks up to `dur`. Returns `true` if the time ran out without a cancel.
    pub fn wait_timeout(&self, dur: Duration) -> bool {
        let deadline = Instant::now() + dur;
        let mut c = self.inner.cancelled.lock();
        while !*c {
            if self.inner.cond.wait_until(&mut c, deadline).timed_out() {
                return !*c;
            }
        }
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::thread;

    #[test]
    fn virtual_clock_advances_only_on_wait() {
        let clock = VirtualClock::new();
        let token = CancelToken::new();
        assert_eq!(clock.now(), Duration::ZERO);
        assert!(clock.wait(Duration::from_millis(1500), &token));
        assert_eq!(clock.now(), Duration::from_millis(1500));
        token.cancel();
        assert!(!clock.wait(Duration::from_secs(1), &token));
        assert_eq!(clock.now(), Duration::from_millis(1500));
    }

    #[test]
    fn cancel_wakes_system_wait_promptly() {
        let clock = SystemClock::new();
        let token = CancelToken::new();
        let t2 = token.clone();
        let start = Instant::now();
        let h = thread::spawn(move || {
            thread::sleep(Duration::from_millis(20));
            t2.cancel();
        });
        assert!(!clock.wait(Duration::from_secs(10), &token));
        assert!(start.elapsed() < Duration::from_secs(1));
        h.join().unwrap();
    }

    #[test]
    fn system_wait_runs_full_duration() {
        let clock = SystemClock::new();
        let start = Instant::now();
        assert!(clock.wait(Duration::from_millis(30), &CancelToken::new()));
        assert!(start.elapsed() >= Duration::from_millis(30));
    }
}
