//! Core of the NXT bridge: the direct-command codec, the brick link, the
//! three direct-control mappings, linear programs with their executor, and a
//! simulated brick for testing without hardware.

pub mod clock;
pub mod drive;
pub mod link;
pub mod logicprog;
pub mod simbrick;
pub mod telegram;

pub use link::{Endpoint, Link, LinkConfig, LinkError, LinkEvent, LinkState};
pub use telegram::Telegram;
