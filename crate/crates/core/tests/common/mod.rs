#![allow(dead_code)]

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use nxtbridge_core::clock::{Clock, SystemClock, VirtualClock};
use nxtbridge_core::link::{Endpoint, Link, LinkConfig};
use nxtbridge_core::simbrick::{serve_with_clock, SimConfig, SimHandle};
use nxtbridge_core::telegram::Telegram;

pub const SETTLE: Duration = Duration::from_secs(5);

pub fn unique_inproc(tag: &str) -> Endpoint {
    static N: AtomicUsize = AtomicUsize::new(0);
    Endpoint::inproc(format!("{tag}-{}", N.fetch_add(1, Ordering::Relaxed))).unwrap()
}

/// Link settings for tests: no background keepalive traffic in the log.
pub fn quiet_config() -> LinkConfig {
    LinkConfig { keepalive_interval: None, ..LinkConfig::default() }
}

pub fn inproc_sim(tag: &str, clock: Arc<dyn Clock>) -> SimHandle {
    serve_with_clock(&unique_inproc(tag), SimConfig::default(), clock).unwrap()
}

pub fn virtual_sim(tag: &str) -> (SimHandle, Arc<VirtualClock>) {
    let clock = Arc::new(VirtualClock::new());
    (inproc_sim(tag, clock.clone()), clock)
}

pub fn wall_sim(tag: &str) -> SimHandle {
    inproc_sim(tag, SystemClock::shared())
}

pub fn connected(sim: &SimHandle) -> Link {
    let link = Link::new(quiet_config());
    link.connect(sim.endpoint()).unwrap();
    link
}

/// Decoded telegrams logged from index `from` on.
pub fn telegrams_since(sim: &SimHandle, from: usize) -> Vec<Telegram> {
    sim.snapshot().log[from..].iter().filter_map(|r| r.telegram().cloned()).collect()
}
