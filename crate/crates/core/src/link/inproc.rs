//! In-process byte pipes, addressed by name.
//!
//! Client writes are stamped with the listener's clock at the moment of the
//! write, so a simulator sharing a [`VirtualClock`](crate::clock::VirtualClock)
//! with the sender sees exactly the sender's timeline.

use std::collections::HashMap;
use std::io;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, OnceLock};
use std::time::Duration;

use crossbeam_channel::{Receiver, RecvTimeoutError, Sender};
use parking_lot::Mutex;
use thiserror::Error;

use crate::clock::Clock;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chunk {
    pub bytes: Vec<u8>,
    /// Sender-side timestamp, when the sender had access to the shared clock.
    pub at: Option<Duration>,
}

struct Entry {
    accept: Sender<ServerConn>,
    busy: Arc<AtomicBool>,
    clock: Arc<dyn Clock>,
}

fn registry() -> &'static Mutex<HashMap<String, Entry>> {
    static REGISTRY: OnceLock<Mutex<HashMap<String, Entry>>> = OnceLock::new();
    REGISTRY.get_or_init(Default::default)
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("inproc endpoint `{0}` is already bound")]
pub struct AddrInUse(pub String);

pub struct InprocListener {
    name: String,
    accept: Receiver<ServerConn>,
}

impl InprocListener {
    pub fn bind(name: &str, clock: Arc<dyn Clock>) -> Result<Self, AddrInUse> {
        let mut reg = registry().lock();
        if reg.contains_key(name) {
            return Err(AddrInUse(name.to_string()));
        }
        let (tx, rx) = crossbeam_channel::unbounded();
        reg.insert(name.to_string(), Entry { accept: tx, busy: Arc::new(AtomicBool::new(false)), clock });
        Ok(InprocListener { name: name.to_string(), accept: rx })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn accept_timeout(&self, timeout: Duration) -> Option<ServerConn> {
        self.accept.recv_timeout(timeout).ok()
    }
}

impl Drop for InprocListener {
    fn drop(&mut self) {
        registry().lock().remove(&self.name);
    }
}

/// Server side of an in-process connection.
pub struct ServerConn {
    rx: Receiver<Chunk>,
    tx: Sender<Chunk>,
}

impl ServerConn {
    pub fn recv_timeout(&self, timeout: Duration) -> Result<Chunk, RecvTimeoutError> {
        self.rx.recv_timeout(timeout)
    }

    pub fn send(&self, bytes: Vec<u8>) -> io::Result<()> {
        self.tx.send(Chunk { bytes, at: None }).map_err(|_| io::ErrorKind::BrokenPipe.into())
    }
}

#[derive(Debug, PartialEq, Eq)]
pub(crate) enum InprocConnectError {
    NotListening,
    Busy,
}

pub(crate) struct ClientConn {
    tx: Option<Sender<Chunk>>,
    rx: Receiver<Chunk>,
    clock: Arc<dyn Clock>,
    busy: Arc<AtomicBool>,
}

pub(crate) fn connect(name: &str) -> Result<ClientConn, InprocConnectError> {
    let reg = registry().lock();
    let entry = reg.get(name).ok_or(InprocConnectError::NotListening)?;
    if entry.busy.compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire).is_err() {
        return Err(InprocConnectError::Busy);
    }
    let (to_server, server_rx) = crossbeam_channel::unbounded();
    let (to_client, client_rx) = crossbeam_channel::unbounded();
    if entry.accept.send(ServerConn { rx: server_rx, tx: to_client }).is_err() {
        entry.busy.store(false, Ordering::Release);
        return Err(InprocConnectError::NotListening);
    }
    Ok(ClientConn {
        tx: Some(to_server),
        rx: client_rx,
        clock: entry.clock.clone(),
        busy: entry.busy.clone(),
    })
}

impl ClientConn {
    pub(crate) fn send_bytes(&mut self, bytes: &[u8]) -> io::Result<()> {
        let tx = self.tx.as_ref().ok_or(io::ErrorKind::NotConnected)?;
        tx.send(Chunk { bytes: bytes.to_vec(), at: Some(self.clock.now()) })
            .map_err(|_| io::ErrorKind::BrokenPipe.into())
    }

    pub(crate) fn rx(&self) -> &Receiver<Chunk> {
        &self.rx
    }

    pub(crate) fn shutdown(&mut self) {
        if self.tx.take().is_some() {
            self.busy.store(false, Ordering::Release);
        }
    }
}

impl Drop for ClientConn {
    fn drop(&mut self) {
        self.shutdown();
    }
}
