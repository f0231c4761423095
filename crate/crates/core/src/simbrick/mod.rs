//! A virtual NXT brick driving a kinematic differential-drive robot.
//!
//! [`SimBrick`] is the pure model; [`serve`] puts it behind a `tcp:` or
//! `inproc:` endpoint speaking the same framed telegrams as a real brick.

mod model;
mod server;

pub use model::{
    LogEntry, LogRecord, SimBrick, SimConfig, SimConfigError, SimPose, SLEEP_LIMIT_MS, TRACE_HEADER,
};
pub use server::{serve, serve_with_clock, SimError, SimHandle, SimProbe, Snapshot};
