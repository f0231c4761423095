//! WebSocket session service in front of one robot link.

pub mod guidance;
pub mod protocol;
pub mod server;
pub mod session;

pub use guidance::{guidance_for, Screen};
pub use protocol::{ClientMsg, Role, ServerMsg};
pub use session::{ClientId, ClientSink, SessionConfig, SessionHandle};
