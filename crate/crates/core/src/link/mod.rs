//! Connection lifecycle and the serialized command stream to a brick.
//!
//! ```text
//! Disconnected ──connect──▶ Connecting ──▶ Connected ──▶ Disconnected
//!       ▲                        │              │
//!       │                        ▼              ▼
//!       └──────disconnect─── Faulted ◀──────────┘
//!                                │
//!                                └──connect──▶ Connecting
//! ```
//!
//! All wire access goes through one lock, so telegrams reach the brick in the
//! order callers acquired it and every reply is read by the caller that asked
//! for it.

mod endpoint;
pub mod inproc;
mod transport;

use std::fmt;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Weak};
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_channel::{Receiver, RecvTimeoutError, Sender};
use parking_lot::{Mutex, MutexGuard};
use serde::Serialize;
use thiserror::Error;

pub use endpoint::{Endpoint, EndpointError, Scheme};

use crate::telegram::{self, CodecError, Command, FrameBuffer, ReplyBody, Telegram};
use transport::{OpenError, RecvError, Transport};

pub const WARN_TRANSPORT_OFF: &str = "transport-off";
pub const WARN_CONNECT_TIMEOUT: &str = "connect-timeout";
pub const WARN_ENDPOINT_REFUSED: &str = "endpoint-refused";

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum LinkState {
    Disconnected,
    Connecting,
    Connected,
    Faulted(String),
}

impl LinkState {
    pub fn name(&self) -> &'static str {
        match self {
            LinkState::Disconnected => "disconnected",
            LinkState::Connecting => "connecting",
            LinkState::Connected => "connected",
            LinkState::Faulted(_) => "faulted",
        }
    }

    pub fn is_connected(&self) -> bool {
        matches!(self, LinkState::Connected)
    }

    /// Legal edges of the state machine.
    pub fn can_transition_to(&self, next: &LinkState) -> bool {
        use LinkState::*;
        matches!(
            (self, next),
            (Disconnected, Connecting)
                | (Connecting, Connected)
                | (Connecting, Faulted(_))
                | (Connected, Disconnected)
                | (Connected, Faulted(_))
                | (Faulted(_), Connecting)
                | (Faulted(_), Disconnected)
        )
    }
}

impl fmt::Display for LinkState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LinkState::Faulted(reason) => write!(f, "faulted ({reason})"),
            other => f.write_str(other.name()),
        }
    }
}

impl Serialize for LinkState {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Warning {
    pub code: &'static str,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LinkEvent {
    StateChanged(LinkState),
    Warning(Warning),
    ReplyReceived(Telegram),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LinkError {
    #[error("link is {0}; connect needs it disconnected or faulted")]
    IllegalState(&'static str),
    #[error("transport unavailable: {0}")]
    TransportUnavailable(String),
    #[error("timed out connecting to the brick")]
    ConnectTimeout,
    #[error("brick refused the connection: {0}")]
    EndpointRefused(String),
    #[error("not connected")]
    NotConnected,
    #[error("no reply within the reply timeout")]
    ReplyTimeout,
    #[error("brick reported error status 0x{status:02X} for opcode 0x{opcode:02X}")]
    BrickError { opcode: u8, status: u8 },
    #[error("link i/o failed: {0}")]
    Io(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinkConfig {
    pub connect_timeout: Duration,
    pub reply_timeout: Duration,
    /// Idle interval after which a KeepAlive is sent. `None` disables it.
    pub keepalive_interval: Option<Duration>,
}

impl Default for LinkConfig {
    fn default() -> Self {
        LinkConfig {
            connect_timeout: Duration::from_secs(5),
            reply_timeout: Duration::from_secs(1),
            keepalive_interval: Some(Duration::from_secs(30)),
        }
    }
}

fn transport_off_text(endpoint: &Endpoint) -> String {
    match endpoint.scheme() {
        Scheme::Serial => "Bluetooth is turned off or the robot is not paired. \
                           Please turn Bluetooth on and press CONNECT again."
            .to_string(),
        Scheme::Tcp | Scheme::Inproc => "The robot simulator is not running. \
                                         Please start it and press CONNECT again."
            .to_string(),
    }
}

struct Wire {
    transport: Option<Box<dyn Transport>>,
    frames: FrameBuffer,
    endpoint: Option<Endpoint>,
    last_traffic: Instant,
}

struct Inner {
    config: LinkConfig,
    state: Mutex<LinkState>,
    wire: Mutex<Wire>,
    subscribers: Mutex<Vec<Sender<LinkEvent>>>,
    run_active: AtomicBool,
    keepalive_stop: Mutex<Option<Sender<()>>>,
}

enum ExchangeError {
    Timeout,
    Closed,
    Io(String),
}

impl Inner {
    fn emit(&self, ev: LinkEvent) {
        self.subscribers.lock().retain(|s| s.send(ev.clone()).is_ok());
    }

    fn set_state(&self, next: LinkState) {
        let mut state = self.state.lock();
        if *state == next {
            return;
        }
        debug_assert!(state.can_transition_to(&next), "illegal link transition {state} -> {next}");
        *state = next.clone();
        drop(state);
        self.emit(LinkEvent::StateChanged(next));
    }

    fn state(&self) -> LinkState {
        self.state.lock().clone()
    }

    /// Writes `bytes` and, if `t` asks for one, waits for the matching reply.
    fn exchange(
        &self,
        wire: &mut Wire,
        t: &Telegram,
        bytes: &[u8],
        timeout: Duration,
    ) -> Result<Option<ReplyBody>, ExchangeError> {
        let transport = wire.transport.as_mut().ok_or(ExchangeError::Closed)?;
        transport.send(bytes).map_err(|e| ExchangeError::Io(e.to_string()))?;
        wire.last_traffic = Instant::now();
        if !t.expects_reply() {
            return Ok(None);
        }
        let deadline = Instant::now() + timeout;
        loop {
            while let Some(payload) = wire.frames.next_frame() {
                match telegram::decode(&payload) {
                    Ok(reply @ Telegram::Reply(body)) => {
                        self.emit(LinkEvent::ReplyReceived(reply));
                        if body.opcode == t.opcode() {
                            return Ok(Some(body));
                        }
                        tracing::debug!("dropping stale reply for opcode 0x{:02X}", body.opcode);
                    }
                    Ok(other) => tracing::debug!("ignoring inbound telegram {other}"),
                    Err(e) => tracing::warn!("undecodable inbound frame: {e}"),
                }
            }
            let remaining = deadline.saturating_duration_since(Instant::now());
            if remaining.is_zero() {
                return Err(ExchangeError::Timeout);
            }
            let transport = wire.transport.as_mut().ok_or(ExchangeError::Closed)?;
            match transport.recv(remaining) {
                Ok(bytes) => wire.frames.push(&bytes),
                Err(RecvError::Timeout) => return Err(ExchangeError::Timeout),
                Err(RecvError::Closed) => return Err(ExchangeError::Closed),
            }
        }
    }

    fn close_wire(wire: &mut Wire) {
        if let Some(mut t) = wire.transport.take() {
            t.close();
        }
        wire.frames.clear();
    }

    fn fault(&self, wire: &mut Wire, reason: String) {
        Self::close_wire(wire);
        self.set_state(LinkState::Faulted(reason));
    }

    fn send_locked(
        &self,
        wire: &mut MutexGuard<'_, Wire>,
        t: &Telegram,
    ) -> Result<Option<ReplyBody>, LinkError> {
        let bytes = telegram::encode_framed(t)?;
        if !self.state().is_connected() {
            return Err(LinkError::NotConnected);
        }
        match self.exchange(wire, t, &bytes, self.config.reply_timeout) {
            Ok(Some(body)) if !body.is_success() => {
                Err(LinkError::BrickError { opcode: body.opcode, status: body.status })
            }
            Ok(reply) => Ok(reply),
            Err(ExchangeError::Timeout) => {
                self.fault(wire, "reply timeout".into());
                Err(LinkError::ReplyTimeout)
            }
            Err(ExchangeError::Closed) => {
                self.fault(wire, "connection closed by the brick".into());
                Err(LinkError::Io("connection closed".into()))
            }
            Err(ExchangeError::Io(e)) => {
                self.fault(wire, e.clone());
                Err(LinkError::Io(e))
            }
        }
    }

    fn stop_keepalive(&self) {
        // Dropping the sender wakes the keepalive thread.
        self.keepalive_stop.lock().take();
    }
}

impl Drop for Inner {
    fn drop(&mut self) {
        let wire = self.wire.get_mut();
        if self.state.get_mut().is_connected() {
            if let (Some(t), Ok(bytes)) =
                (wire.transport.as_mut(), telegram::encode_framed(&Telegram::stop_all()))
            {
                let _ = t.send(&bytes);
            }
        }
        Inner::close_wire(wire);
    }
}

/// Handle to one brick connection. Clones share the connection.
#[derive(Clone)]
pub struct Link {
    inner: Arc<Inner>,
}

impl fmt::Debug for Link {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Link").field("state", &self.state()).finish()
    }
}

impl Default for Link {
    fn default() -> Self {
        Self::new(LinkConfig::default())
    }
}

impl Link {
    pub fn new(config: LinkConfig) -> Self {
        Link {
            inner: Arc::new(Inner {
                config,
                state: Mutex::new(LinkState::Disconnected),
                wire: Mutex::new(Wire {
                    transport: None,
                    frames: FrameBuffer::new(),
                    endpoint: None,
                    last_traffic: Instant::now(),
                }),
                subscribers: Mutex::new(Vec::new()),
                run_active: AtomicBool::new(false),
                keepalive_stop: Mutex::new(None),
            }),
        }
    }

    pub fn config(&self) -> &LinkConfig {
        &self.inner.config
    }

    pub fn state(&self) -> LinkState {
        self.inner.state()
    }

    pub fn endpoint(&self) -> Option<Endpoint> {
        self.inner.wire.lock().endpoint.clone()
    }

    /// New event stream. Events emitted before subscribing are not replayed.
    pub fn subscribe(&self) -> Receiver<LinkEvent> {
        let (tx, rx) = crossbeam_channel::unbounded();
        self.inner.subscribers.lock().push(tx);
        rx
    }

    /// Opens the endpoint and verifies liveness with a KeepAlive.
    pub fn connect(&self, endpoint: &Endpoint) -> Result<LinkState, LinkError> {
        let inner = &self.inner;
        let mut wire = inner.wire.lock();
        {
            let state = inner.state.lock();
            match *state {
                LinkState::Disconnected | LinkState::Faulted(_) => {}
                ref other => return Err(LinkError::IllegalState(other.name())),
            }
        }
        inner.set_state(LinkState::Connecting);
        wire.endpoint = Some(endpoint.clone());
        let started = Instant::now();

        let (code, text, err) = match transport::open(endpoint, inner.config.connect_timeout) {
            Ok(t) => {
                wire.transport = Some(t);
                wire.frames.clear();
                let probe = Telegram::with_reply(Command::KeepAlive);
                let bytes = telegram::encode_framed(&probe)?;
                let budget = inner.config.connect_timeout.saturating_sub(started.elapsed());
                match inner.exchange(&mut wire, &probe, &bytes, budget) {
                    Ok(_) => {
                        inner.set_state(LinkState::Connected);
                        drop(wire);
                        self.start_keepalive();
                        return Ok(LinkState::Connected);
                    }
                    Err(ExchangeError::Timeout) => (
                        WARN_CONNECT_TIMEOUT,
                        "The robot did not answer. Check that it is switched on and press CONNECT again."
                            .to_string(),
                        LinkError::ConnectTimeout,
                    ),
                    Err(ExchangeError::Closed) | Err(ExchangeError::Io(_)) => (
                        WARN_ENDPOINT_REFUSED,
                        "The robot is busy with another device. Disconnect it there and press CONNECT again."
                            .to_string(),
                        LinkError::EndpointRefused("connection closed during handshake".into()),
                    ),
                }
            }
            Err(OpenError::Unavailable(why)) => {
                (WARN_TRANSPORT_OFF, transport_off_text(endpoint), LinkError::TransportUnavailable(why))
            }
            Err(OpenError::Timeout) => (
                WARN_CONNECT_TIMEOUT,
                "The robot did not answer. Check that it is switched on and press CONNECT again.".to_string(),
                LinkError::ConnectTimeout,
            ),
            Err(OpenError::Refused(why)) => (
                WARN_ENDPOINT_REFUSED,
                "The robot is busy with another device. Disconnect it there and press CONNECT again."
                    .to_string(),
                LinkError::EndpointRefused(why),
            ),
        };
        inner.fault(&mut wire, err.to_string());
        inner.emit(LinkEvent::Warning(Warning { code, text }));
        Err(err)
    }

    /// Sends one telegram. Blocks for the reply when the telegram asks for one.
    pub fn send(&self, t: &Telegram) -> Result<Option<ReplyBody>, LinkError> {
        let mut wire = self.inner.wire.lock();
        self.inner.send_locked(&mut wire, t)
    }

    /// Sends several telegrams without letting other senders interleave.
    pub fn send_all<'a>(&self, telegrams: impl IntoIterator<Item = &'a Telegram>) -> Result<(), LinkError> {
        let mut wire = self.inner.wire.lock();
        for t in telegrams {
            self.inner.send_locked(&mut wire, t)?;
        }
        Ok(())
    }

    /// Brakes all motors (best effort) and closes. Idempotent.
    pub fn disconnect(&self) -> LinkState {
        let inner = &self.inner;
        inner.stop_keepalive();
        let mut wire = inner.wire.lock();
        match inner.state() {
            LinkState::Disconnected => return LinkState::Disconnected,
            LinkState::Connected => {
                let stop = Telegram::stop_all();
                if let Ok(bytes) = telegram::encode_framed(&stop) {
                    let _ = inner.exchange(&mut wire, &stop, &bytes, Duration::ZERO);
                }
            }
            _ => {}
        }
        Inner::close_wire(&mut wire);
        inner.set_state(LinkState::Disconnected);
        LinkState::Disconnected
    }

    /// Marks a program run as active on this link. `None` if one already is.
    pub fn try_begin_run(&self) -> Option<RunGuard> {
        self.inner
            .run_active
            .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
            .ok()
            .map(|_| RunGuard { link: self.clone() })
    }

    pub fn is_running(&self) -> bool {
        self.inner.run_active.load(Ordering::Acquire)
    }

    fn start_keepalive(&self) {
        let Some(interval) = self.inner.config.keepalive_interval else {
            return;
        };
        let (stop_tx, stop_rx) = crossbeam_channel::bounded::<()>(0);
        *self.inner.keepalive_stop.lock() = Some(stop_tx);
        let weak: Weak<Inner> = Arc::downgrade(&self.inner);
        let poll = interval.min(Duration::from_secs(1));
        let spawned = thread::Builder::new().name("link-keepalive".into()).spawn(move || {
            while let Err(RecvTimeoutError::Timeout) = stop_rx.recv_timeout(poll) {
                let Some(inner) = weak.upgrade() else { break };
                let mut wire = inner.wire.lock();
                if !inner.state().is_connected() {
                    break;
                }
                if wire.last_traffic.elapsed() >= interval {
                    if let Err(e) = inner.send_locked(&mut wire, &Telegram::with_reply(Command::KeepAlive)) {
                        tracing::warn!("keepalive failed: {e}");
                    }
                }
            }
        });
        if let Err(e) = spawned {
            tracing::error!("failed to spawn keepalive thread: {e}");
        }
    }
}

/// Held for the duration of a program run; releases the run slot on drop.
pub struct RunGuard {
    link: Link,
}

impl Drop for RunGuard {
    fn drop(&mut self) {
        self.link.inner.run_active.store(false, Ordering::Release);
    }
}
