//! The session owner: one thread that serializes every client message, link
//! event and run update, and fans results out to all connected clients.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use crossbeam_channel::{select, Receiver, Sender};
use nxtbridge_core::clock::{Clock, SystemClock};
use nxtbridge_core::drive::{self, DriveCommand, DriveConfig, PowerPair, Tilt, UtteranceMatch, Vocabulary};
use nxtbridge_core::link::{Endpoint, Link, LinkConfig, LinkEvent, LinkState};
use nxtbridge_core::logicprog::{Executor, LogicProgram, RunError, RunStatus};
use nxtbridge_core::simbrick::SimProbe;
use nxtbridge_core::telegram::{Command, ReplyPayload, Telegram};
use parking_lot::Mutex;

use crate::guidance::{guidance_with, Catalog, English, Screen};
use crate::protocol::*;

pub type ClientId = u64;

/// Where a client's outgoing messages go. Returns false once the client is gone.
pub trait ClientSink: Send + 'static {
    fn deliver(&self, msg: ServerMsg) -> bool;
}

impl ClientSink for Sender<ServerMsg> {
    fn deliver(&self, msg: ServerMsg) -> bool {
        self.send(msg).is_ok()
    }
}

impl ClientSink for tokio::sync::mpsc::UnboundedSender<ServerMsg> {
    fn deliver(&self, msg: ServerMsg) -> bool {
        self.send(msg).is_ok()
    }
}

#[derive(Clone)]
pub struct SessionConfig {
    pub link: LinkConfig,
    pub drive: DriveConfig,
    pub vocabulary: Vocabulary,
    /// Used by `connect` messages that carry no target.
    pub default_target: Option<Endpoint>,
    pub telemetry_period: Duration,
    /// Clock the program executor waits on.
    pub clock: Arc<dyn Clock>,
    pub catalog: Arc<dyn Catalog>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            link: LinkConfig::default(),
            drive: DriveConfig::default(),
            vocabulary: Vocabulary::default(),
            default_target: None,
            telemetry_period: Duration::from_millis(200),
            clock: SystemClock::shared(),
            catalog: Arc::new(English),
        }
    }
}

enum Input {
    Join { id: ClientId, sink: Box<dyn ClientSink> },
    Leave(ClientId),
    Message { id: ClientId, text: String },
    Shutdown,
}

enum Internal {
    Progress(usize),
    RunDone(Result<RunStatus, RunError>),
    ConnectDone,
}

/// Handle to a running session. Dropping it stops the session and
/// disconnects the robot.
pub struct SessionHandle {
    inbox: Sender<Input>,
    next_id: AtomicU64,
    link: Link,
    owner: Mutex<Option<JoinHandle<()>>>,
}

impl std::fmt::Debug for SessionHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SessionHandle").field("link", &self.link).finish()
    }
}

impl SessionHandle {
    pub fn spawn(cfg: SessionConfig) -> SessionHandle {
        let link = Link::new(cfg.link);
        let (inbox, rx) = crossbeam_channel::unbounded();
        let owner = Owner::new(cfg, link.clone());
        let handle = thread::Builder::new()
            .name("session-owner".into())
            .spawn(move || owner.run(rx))
            .expect("spawn session owner");
        SessionHandle { inbox, next_id: AtomicU64::new(1), link, owner: Mutex::new(Some(handle)) }
    }

    /// Registers a client. It starts as an observer and immediately
    /// receives the current state and guidance.
    pub fn join(&self, sink: impl ClientSink) -> ClientId {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let _ = self.inbox.send(Input::Join { id, sink: Box::new(sink) });
        id
    }

    pub fn message(&self, id: ClientId, text: impl Into<String>) {
        let _ = self.inbox.send(Input::Message { id, text: text.into() });
    }

    pub fn leave(&self, id: ClientId) {
        let _ = self.inbox.send(Input::Leave(id));
    }

    pub fn link(&self) -> &Link {
        &self.link
    }

    pub fn shutdown(&self) {
        let _ = self.inbox.send(Input::Shutdown);
        if let Some(h) = self.owner.lock().take() {
            let _ = h.join();
        }
    }
}

impl Drop for SessionHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}

struct Owner {
    cfg: SessionConfig,
    link: Link,
    link_events: Receiver<LinkEvent>,
    executor: Arc<Executor>,
    clients: BTreeMap<ClientId, Box<dyn ClientSink>>,
    controller: Option<ClientId>,
    screen: Screen,
    link_state: LinkState,
    run: RunStatus,
    run_thread: Option<JoinHandle<()>>,
    program: Option<LogicProgram>,
    connect_pending: bool,
    last_guidance: Option<(Screen, LinkState, RunStatus)>,
    internal_tx: Sender<Internal>,
    internal_rx: Receiver<Internal>,
}

impl Owner {
    fn new(cfg: SessionConfig, link: Link) -> Owner {
        let (internal_tx, internal_rx) = crossbeam_channel::unbounded();
        Owner {
            link_events: link.subscribe(),
            executor: Arc::new(Executor::new(link.clone(), cfg.clock.clone())),
            link_state: link.state(),
            link,
            cfg,
            clients: BTreeMap::new(),
            controller: None,
            screen: Screen::Home,
            run: RunStatus::Idle,
            run_thread: None,
            program: None,
            connect_pending: false,
            last_guidance: None,
            internal_tx,
            internal_rx,
        }
    }

    fn run(mut self, inbox: Receiver<Input>) {
        let tick = crossbeam_channel::tick(self.cfg.telemetry_period);
        loop {
            select! {
                recv(inbox) -> input => match input {
                    Ok(Input::Shutdown) | Err(_) => break,
                    Ok(input) => self.on_input(input),
                },
                recv(self.link_events) -> ev => {
                    if let Ok(ev) = ev {
                        self.on_link_event(ev);
                    }
                }
                recv(self.internal_rx) -> ev => {
                    if let Ok(ev) = ev {
                        self.on_internal(ev);
                    }
                }
                recv(tick) -> _ => self.on_tick(),
            }
        }
        self.executor.cancel();
        if let Some(h) = self.run_thread.take() {
            let _ = h.join();
        }
        self.link.disconnect();
    }

    fn running(&self) -> bool {
        self.run_thread.is_some()
    }

    fn role_of(&self, id: ClientId) -> Role {
        if self.controller == Some(id) {
            Role::Controller
        } else {
            Role::Observer
        }
    }

    fn state_for(&self, id: ClientId) -> ServerMsg {
        ServerMsg::State {
            link: self.link_state.clone(),
            screen: self.screen,
            run: self.run.clone(),
            role: self.role_of(id),
            program: self
                .program
                .as_ref()
                .map(|p| ProgramSummary { name: p.name().to_string(), steps: p.len() }),
        }
    }

    fn guidance_text(&self) -> String {
        guidance_with(self.cfg.catalog.as_ref(), self.screen, &self.link_state, &self.run)
    }

    fn send_to(&mut self, id: ClientId, msg: ServerMsg) {
        let alive = self.clients.get(&id).map(|c| c.deliver(msg));
        if alive == Some(false) {
            self.drop_client(id);
        }
    }

    fn broadcast_with(&mut self, mut make: impl FnMut(&Owner, ClientId) -> ServerMsg) {
        let ids: Vec<ClientId> = self.clients.keys().copied().collect();
        let mut dead = Vec::new();
        for id in ids {
            let msg = make(self, id);
            if !self.clients[&id].deliver(msg) {
                dead.push(id);
            }
        }
        for id in dead {
            self.drop_client(id);
        }
    }

    fn broadcast(&mut self, msg: ServerMsg) {
        self.broadcast_with(|_, _| msg.clone());
    }

    fn broadcast_state(&mut self) {
        self.broadcast_with(|o, id| o.state_for(id));
    }

    /// Broadcasts guidance when screen, link or run status changed.
    fn refresh_guidance(&mut self) {
        let now = (self.screen, self.link_state.clone(), self.run.clone());
        if self.last_guidance.as_ref() != Some(&now) {
            self.last_guidance = Some(now);
            let text = self.guidance_text();
            self.broadcast(ServerMsg::Guidance { text });
        }
    }

    fn state_changed(&mut self) {
        self.broadcast_state();
        self.refresh_guidance();
    }

    fn on_input(&mut self, input: Input) {
        match input {
            Input::Join { id, sink } => {
                self.clients.insert(id, sink);
                let state = self.state_for(id);
                let text = self.guidance_text();
                self.send_to(id, state);
                self.send_to(id, ServerMsg::Guidance { text });
            }
            Input::Leave(id) => self.drop_client(id),
            Input::Message { id, text } => {
                if !self.clients.contains_key(&id) {
                    return;
                }
                match ClientMsg::parse(&text) {
                    Err(reason) => self.send_to(id, ServerMsg::error(ERR_SCHEMA, reason)),
                    Ok(msg) if msg.needs_control() && self.controller != Some(id) => self.send_to(
                        id,
                        ServerMsg::error(ERR_NOT_CONTROLLER, "send hello with role controller first"),
                    ),
                    Ok(msg) => self.on_message(id, msg),
                }
            }
            Input::Shutdown => {}
        }
    }

    fn drop_client(&mut self, id: ClientId) {
        if self.clients.remove(&id).is_some() && self.controller == Some(id) {
            self.release_control();
        }
    }

    /// The controller left or stepped down: nothing keeps moving.
    fn release_control(&mut self) {
        self.controller = None;
        if self.running() {
            self.executor.cancel();
        } else if self.link_state.is_connected() {
            if let Err(e) = self.link.send_all(&drive::brake_telegrams(&self.cfg.drive)) {
                tracing::warn!("could not stop motors after controller left: {e}");
            }
        }
    }

    fn on_message(&mut self, id: ClientId, msg: ClientMsg) {
        match msg {
            ClientMsg::Hello { role: Role::Controller } => {
                if self.controller.is_some_and(|c| c != id) {
                    self.send_to(id, ServerMsg::error(ERR_NOT_CONTROLLER, "another client is in control"));
                    return;
                }
                self.controller = Some(id);
                let state = self.state_for(id);
                self.send_to(id, state);
            }
            ClientMsg::Hello { role: Role::Observer } => {
                if self.controller == Some(id) {
                    self.release_control();
                }
                let state = self.state_for(id);
                self.send_to(id, state);
            }
            ClientMsg::Screen { screen } => {
                self.screen = screen;
                self.state_changed();
            }
            ClientMsg::Connect { target } => self.connect(id, target),
            ClientMsg::Disconnect {} => self.disconnect(id),
            ClientMsg::Drive { cmd } => match cmd.parse::<DriveCommand>() {
                Ok(cmd) => self.drive(id, drive::map_command(cmd, &self.cfg.drive)),
                Err(e) => self.send_to(id, ServerMsg::error(ERR_SCHEMA, e.to_string())),
            },
            ClientMsg::Tilt { pitch, roll } => {
                self.drive(id, drive::map_tilt(Tilt::new(pitch, roll), &self.cfg.drive))
            }
            ClientMsg::Speech { utterance } => match drive::map_utterance(&utterance, &self.cfg.vocabulary) {
                UtteranceMatch::Command(cmd) => self.drive(id, drive::map_command(cmd, &self.cfg.drive)),
                UtteranceMatch::NoMatch => {
                    let commands = self.cfg.vocabulary.utterances().map(|(u, _)| u.to_string()).collect();
                    self.send_to(id, ServerMsg::SpeechNoMatch { utterance, commands });
                }
            },
            ClientMsg::ProgramLoad { program } => self.load_program(id, program),
            ClientMsg::ProgramRun {} => self.start_run(id),
            ClientMsg::ProgramCancel {} => {
                if self.running() {
                    self.executor.cancel();
                } else {
                    let state = self.state_for(id);
                    self.send_to(id, state);
                }
            }
        }
    }

    fn connect(&mut self, id: ClientId, target: Option<String>) {
        let endpoint = match target {
            Some(t) => match t.parse::<Endpoint>() {
                Ok(ep) => ep,
                Err(e) => return self.send_to(id, ServerMsg::error(ERR_SCHEMA, e.to_string())),
            },
            None => match self.cfg.default_target.clone() {
                Some(ep) => ep,
                None => {
                    return self.send_to(id, ServerMsg::error(ERR_NO_TARGET, "no target endpoint configured"))
                }
            },
        };
        if self.connect_pending || matches!(self.link_state, LinkState::Connected | LinkState::Connecting) {
            return self
                .send_to(id, ServerMsg::error(ERR_ALREADY_CONNECTED, "already connected or connecting"));
        }
        self.connect_pending = true;
        let (link, done) = (self.link.clone(), self.internal_tx.clone());
        // Connecting can take seconds; state changes arrive as link events.
        thread::spawn(move || {
            if let Err(e) = link.connect(&endpoint) {
                tracing::info!("connect to {endpoint} failed: {e}");
            }
            let _ = done.send(Internal::ConnectDone);
        });
    }

    fn disconnect(&mut self, id: ClientId) {
        if self.running() {
            self.executor.cancel();
        }
        if self.link_state == LinkState::Disconnected && !self.connect_pending {
            let state = self.state_for(id);
            return self.send_to(id, state);
        }
        let link = self.link.clone();
        thread::spawn(move || link.disconnect());
    }

    fn drive(&mut self, id: ClientId, pair: PowerPair) {
        if !self.link_state.is_connected() {
            return self.send_to(id, ServerMsg::error(ERR_NOT_CONNECTED, "press CONNECT first"));
        }
        if self.running() {
            return self.send_to(id, ServerMsg::error(ERR_PROGRAM_RUNNING, "a program is running"));
        }
        match self.link.send_all(&drive::to_telegrams(pair, &self.cfg.drive)) {
            Ok(()) => self.broadcast_state(),
            Err(e) => self.send_to(id, ServerMsg::error(ERR_NOT_CONNECTED, e.to_string())),
        }
    }

    fn load_program(&mut self, id: ClientId, value: serde_json::Value) {
        if self.running() {
            return self
                .send_to(id, ServerMsg::error(ERR_PROGRAM_RUNNING, "cancel the running program first"));
        }
        // Accept the document itself or its file text.
        let parsed = match value {
            serde_json::Value::String(text) => LogicProgram::parse(&text).map_err(|e| e.to_string()),
            other => serde_json::from_value::<LogicProgram>(other).map_err(|e| e.to_string()),
        };
        match parsed {
            Ok(p) => {
                self.program = Some(p);
                self.run = RunStatus::Idle;
                self.state_changed();
            }
            Err(reason) => self.send_to(id, ServerMsg::error(ERR_SCHEMA, reason)),
        }
    }

    fn start_run(&mut self, id: ClientId) {
        if self.running() {
            return self.send_to(id, ServerMsg::error(ERR_ALREADY_RUNNING, "a program is already running"));
        }
        if !self.link_state.is_connected() {
            return self.send_to(id, ServerMsg::error(ERR_NOT_CONNECTED, "press CONNECT first"));
        }
        let Some(program) = self.program.clone() else {
            return self.send_to(id, ServerMsg::error(ERR_NO_PROGRAM, "load a program first"));
        };
        let (exec, tx, cfg) = (self.executor.clone(), self.internal_tx.clone(), self.cfg.drive);
        let spawned = thread::Builder::new().name("program-run".into()).spawn(move || {
            let progress = tx.clone();
            let result = exec.run(&program, &cfg, |i| {
                let _ = progress.send(Internal::Progress(i));
            });
            let _ = tx.send(Internal::RunDone(result));
        });
        match spawned {
            Ok(h) => self.run_thread = Some(h),
            Err(e) => self.send_to(id, ServerMsg::error(ERR_PROGRAM_RUNNING, e.to_string())),
        }
    }

    fn on_internal(&mut self, ev: Internal) {
        match ev {
            Internal::Progress(step) => {
                self.run = RunStatus::Running { step };
                self.broadcast(ServerMsg::Progress { step });
                self.state_changed();
            }
            Internal::RunDone(result) => {
                if let Some(h) = self.run_thread.take() {
                    let _ = h.join();
                }
                match result {
                    Ok(status) => self.run = status,
                    Err(e) => {
                        let code = match e {
                            RunError::NotConnected => ERR_NOT_CONNECTED,
                            RunError::AlreadyRunning => ERR_ALREADY_RUNNING,
                        };
                        if let Some(c) = self.controller {
                            self.send_to(c, ServerMsg::error(code, e.to_string()));
                        }
                    }
                }
                self.state_changed();
            }
            Internal::ConnectDone => self.connect_pending = false,
        }
    }

    fn on_link_event(&mut self, ev: LinkEvent) {
        match ev {
            LinkEvent::StateChanged(state) => {
                self.link_state = state;
                self.state_changed();
            }
            LinkEvent::Warning(w) => {
                self.broadcast(ServerMsg::Warning { code: w.code.to_string(), text: w.text })
            }
            LinkEvent::ReplyReceived(_) => {}
        }
    }

    fn on_tick(&mut self) {
        if !self.link_state.is_connected() || self.clients.is_empty() {
            return;
        }
        // Polling mid-run would interleave with the program's telegrams.
        let battery_mv = if self.running() {
            None
        } else {
            match self.link.send(&Telegram::with_reply(Command::GetBatteryLevel)) {
                Ok(Some(reply)) => match reply.payload {
                    ReplyPayload::Battery { millivolts } => Some(millivolts),
                    _ => None,
                },
                Ok(None) => None,
                Err(e) => {
                    tracing::debug!("battery poll failed: {e}");
                    None
                }
            }
        };
        let pose = self.link.endpoint().and_then(|ep| SimProbe::find(&ep)).map(|p| p.pose());
        self.broadcast(ServerMsg::Telemetry { battery_mv, pose });
    }
}
