use std::collections::HashMap;
use std::io::{self, Read, Write};
use std::net::{Shutdown, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, OnceLock, Weak};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crossbeam_channel::RecvTimeoutError;
use parking_lot::{Condvar, Mutex};
use thiserror::Error;

use super::model::{LogRecord, SimBrick, SimConfig, SimConfigError, SimPose};
use crate::clock::{Clock, SystemClock};
use crate::link::inproc::{InprocListener, ServerConn};
use crate::link::{Endpoint, Scheme};
use crate::telegram::{self, FrameBuffer};

const POLL: Duration = Duration::from_millis(20);
/// How long a new client waits for a departing one before being refused.
const HANDOVER_GRACE: Duration = Duration::from_millis(300);

#[derive(Debug, Error)]
pub enum SimError {
    #[error("cannot bind {endpoint}: {reason}")]
    Bind { endpoint: String, reason: String },
    #[error("the simulator cannot listen on serial endpoints")]
    UnsupportedScheme,
    #[error(transparent)]
    Config(#[from] SimConfigError),
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub pose: SimPose,
    pub log: Vec<LogRecord>,
}

struct Shared {
    brick: Mutex<SimBrick>,
    log_grew: Condvar,
    clock: Arc<dyn Clock>,
}

impl Shared {
    fn snapshot(&self) -> Snapshot {
        let mut brick = self.brick.lock();
        let pose = brick.advance_to(self.clock.now());
        Snapshot { pose, log: brick.log().to_vec() }
    }

    /// Feeds received bytes through the frame buffer; returns framed replies.
    fn ingest(&self, frames: &mut FrameBuffer, at: Duration, bytes: &[u8]) -> Vec<Vec<u8>> {
        frames.push(bytes);
        let mut out = Vec::new();
        while let Some(payload) = frames.next_frame() {
            let mut brick = self.brick.lock();
            match telegram::decode(&payload) {
                Ok(t) => {
                    if let Some(reply) = brick.apply(at, t) {
                        match telegram::encode_framed(&reply) {
                            Ok(bytes) => out.push(bytes),
                            Err(e) => tracing::error!("cannot encode reply: {e}"),
                        }
                    }
                }
                Err(e) => brick.log_malformed(at, payload, e.to_string()),
            }
            self.log_grew.notify_all();
        }
        out
    }
}

fn sim_registry() -> &'static Mutex<HashMap<String, Weak<Shared>>> {
    static SIMS: OnceLock<Mutex<HashMap<String, Weak<Shared>>>> = OnceLock::new();
    SIMS.get_or_init(Default::default)
}

/// Read-only view of a running in-process simulator.
#[derive(Clone)]
pub struct SimProbe {
    shared: Arc<Shared>,
}

impl SimProbe {
    /// Finds the simulator behind an `inproc:` endpoint, if one is running.
    pub fn find(endpoint: &Endpoint) -> Option<SimProbe> {
        if endpoint.scheme() != Scheme::Inproc {
            return None;
        }
        let shared = sim_registry().lock().get(endpoint.address())?.upgrade()?;
        Some(SimProbe { shared })
    }

    pub fn pose(&self) -> SimPose {
        self.shared.snapshot().pose
    }
}

/// A running simulator. Stops when dropped.
pub struct SimHandle {
    shared: Arc<Shared>,
    endpoint: Endpoint,
    stop: Arc<AtomicBool>,
    worker: Option<JoinHandle<()>>,
}

impl std::fmt::Debug for SimHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SimHandle").field("endpoint", &self.endpoint).finish()
    }
}

/// Serves a simulator on `endpoint` following the wall clock.
pub fn serve(endpoint: &Endpoint, cfg: SimConfig) -> Result<SimHandle, SimError> {
    serve_with_clock(endpoint, cfg, SystemClock::shared())
}

/// Serves with an explicit clock. Sharing a virtual clock with the sender
/// only gives deterministic timestamps on `inproc:` endpoints, where writes
/// carry the sender's time.
pub fn serve_with_clock(
    endpoint: &Endpoint,
    cfg: SimConfig,
    clock: Arc<dyn Clock>,
) -> Result<SimHandle, SimError> {
    let shared = Arc::new(Shared {
        brick: Mutex::new(SimBrick::new(cfg)?),
        log_grew: Condvar::new(),
        clock: clock.clone(),
    });
    let stop = Arc::new(AtomicBool::new(false));
    let bind_err = |reason: String| SimError::Bind { endpoint: endpoint.to_string(), reason };

    let (bound, worker) = match endpoint.scheme() {
        Scheme::Tcp => {
            let listener = TcpListener::bind(endpoint.address()).map_err(|e| bind_err(e.to_string()))?;
            listener.set_nonblocking(true).map_err(|e| bind_err(e.to_string()))?;
            let local = listener.local_addr().map_err(|e| bind_err(e.to_string()))?;
            let bound = Endpoint::tcp(local.to_string()).expect("socket address is host:port");
            let (sh, st) = (shared.clone(), stop.clone());
            let worker = thread::Builder::new()
                .name("sim-tcp-accept".into())
                .spawn(move || tcp_accept_loop(listener, sh, st))
                .map_err(|e| bind_err(e.to_string()))?;
            (bound, worker)
        }
        Scheme::Inproc => {
            let listener =
                InprocListener::bind(endpoint.address(), clock).map_err(|e| bind_err(e.to_string()))?;
            sim_registry().lock().insert(endpoint.address().to_string(), Arc::downgrade(&shared));
            let (sh, st) = (shared.clone(), stop.clone());
            let worker = thread::Builder::new()
                .name("sim-inproc".into())
                .spawn(move || inproc_loop(listener, sh, st))
                .map_err(|e| bind_err(e.to_string()))?;
            (endpoint.clone(), worker)
        }
        Scheme::Serial => return Err(SimError::UnsupportedScheme),
    };
    Ok(SimHandle { shared, endpoint: bound, stop, worker: Some(worker) })
}

fn tcp_accept_loop(listener: TcpListener, shared: Arc<Shared>, stop: Arc<AtomicBool>) {
    let active = Arc::new(AtomicBool::new(false));
    let mut handlers: Vec<JoinHandle<()>> = Vec::new();
    while !stop.load(Ordering::Acquire) {
        match listener.accept() {
            Ok((stream, peer)) => {
                let deadline = Instant::now() + HANDOVER_GRACE;
                while active.load(Ordering::Acquire) && Instant::now() < deadline {
                    thread::sleep(Duration::from_millis(2));
                }
                if active.swap(true, Ordering::AcqRel) {
                    tracing::info!("refusing second client {peer}");
                    let _ = stream.shutdown(Shutdown::Both);
                    continue;
                }
                tracing::info!("simulator client connected from {peer}");
                let (sh, st, act) = (shared.clone(), stop.clone(), active.clone());
                handlers.retain(|h| !h.is_finished());
                match thread::Builder::new().name("sim-tcp-conn".into()).spawn(move || {
                    if let Err(e) = tcp_connection(stream, &sh, &st) {
                        tracing::debug!("simulator connection ended: {e}");
                    }
                    act.store(false, Ordering::Release);
                }) {
                    Ok(h) => handlers.push(h),
                    Err(e) => {
                        tracing::error!("cannot spawn connection handler: {e}");
                        active.store(false, Ordering::Release);
                    }
                }
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(2)),
            Err(e) => {
                tracing::warn!("accept failed: {e}");
                thread::sleep(POLL);
            }
        }
    }
    for h in handlers {
        let _ = h.join();
    }
}

fn tcp_connection(mut stream: TcpStream, shared: &Shared, stop: &AtomicBool) -> io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(POLL))?;
    let mut frames = FrameBuffer::new();
    let mut buf = [0u8; 1024];
    while !stop.load(Ordering::Acquire) {
        match stream.read(&mut buf) {
            Ok(0) => return Ok(()),
            Ok(n) => {
                let at = shared.clock.now();
                for reply in shared.ingest(&mut frames, at, &buf[..n]) {
                    stream.write_all(&reply)?;
                }
            }
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(())
}

fn inproc_loop(listener: InprocListener, shared: Arc<Shared>, stop: Arc<AtomicBool>) {
    while !stop.load(Ordering::Acquire) {
        if let Some(conn) = listener.accept_timeout(POLL) {
            inproc_connection(conn, &shared, &stop);
        }
    }
}

fn inproc_connection(conn: ServerConn, shared: &Shared, stop: &AtomicBool) {
    let mut frames = FrameBuffer::new();
    while !stop.load(Ordering::Acquire) {
        match conn.recv_timeout(POLL) {
            Ok(chunk) => {
                let at = chunk.at.unwrap_or_else(|| shared.clock.now());
                for reply in shared.ingest(&mut frames, at, &chunk.bytes) {
                    if conn.send(reply).is_err() {
                        return;
                    }
                }
            }
            Err(RecvTimeoutError::Timeout) => {}
            Err(RecvTimeoutError::Disconnected) => return,
        }
    }
}

impl SimHandle {
    /// The bound endpoint; for `tcp:host:0` this carries the real port.
    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.shared.clock
    }

    pub fn snapshot(&self) -> Snapshot {
        self.shared.snapshot()
    }

    pub fn pose(&self) -> SimPose {
        self.snapshot().pose
    }

    pub fn log_len(&self) -> usize {
        self.shared.brick.lock().log().len()
    }

    /// Blocks until the log holds at least `len` records or `timeout` passes.
    pub fn wait_for_log_len(&self, len: usize, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        let mut brick = self.shared.brick.lock();
        while brick.log().len() < len {
            if self.shared.log_grew.wait_until(&mut brick, deadline).timed_out() {
                return brick.log().len() >= len;
            }
        }
        true
    }

    pub fn enable_trace(&self) {
        self.shared.brick.lock().enable_trace();
    }

    pub fn trace_csv(&self) -> String {
        let mut brick = self.shared.brick.lock();
        brick.advance_to(self.shared.clock.now());
        brick.trace_csv()
    }

    pub fn probe(&self) -> SimProbe {
        SimProbe { shared: self.shared.clone() }
    }

    pub fn shutdown(mut self) {
        self.stop_worker();
    }

    fn stop_worker(&mut self) {
        self.stop.store(true, Ordering::Release);
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
        if self.endpoint.scheme() == Scheme::Inproc {
            let mut reg = sim_registry().lock();
            let ours =
                reg.get(self.endpoint.address()).is_some_and(|w| w.as_ptr() == Arc::as_ptr(&self.shared));
            if ours {
                reg.remove(self.endpoint.address());
            }
        }
    }
}

impl Drop for SimHandle {
    fn drop(&mut self) {
        self.stop_worker();
    }
}
