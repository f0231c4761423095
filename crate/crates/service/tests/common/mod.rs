#![allow(dead_code)]

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use crossbeam_channel::Receiver;
use nxtbridge_core::link::{Endpoint, LinkConfig};
use nxtbridge_service::{ClientId, ServerMsg, SessionConfig, SessionHandle};
use serde_json::Value;

pub const WAIT: Duration = Duration::from_secs(5);

pub fn unique_inproc(tag: &str) -> Endpoint {
    static N: AtomicUsize = AtomicUsize::new(0);
    Endpoint::inproc(format!("svc-{tag}-{}", N.fetch_add(1, Ordering::Relaxed))).unwrap()
}

/// Session settings that keep background traffic off the wire.
pub fn quiet() -> SessionConfig {
    SessionConfig {
        link: LinkConfig { keepalive_interval: None, ..LinkConfig::default() },
        telemetry_period: Duration::from_secs(3600),
        ..SessionConfig::default()
    }
}

pub struct TestClient {
    pub id: ClientId,
    pub rx: Receiver<ServerMsg>,
}

impl TestClient {
    pub fn join(session: &SessionHandle) -> TestClient {
        let (tx, rx) = crossbeam_channel::unbounded();
        let id = session.join(tx);
        TestClient { id, rx }
    }

    pub fn send(&self, session: &SessionHandle, msg: Value) {
        session.message(self.id, msg.to_string());
    }

    /// Next message satisfying `pred`; earlier ones are discarded.
    pub fn expect(&self, what: &str, pred: impl Fn(&Value) -> bool) -> Value {
        let deadline = Instant::now() + WAIT;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            match self.rx.recv_timeout(left) {
                Ok(msg) => {
                    let v = serde_json::to_value(&msg).unwrap();
                    if pred(&v) {
                        return v;
                    }
                }
                Err(_) => panic!("timed out waiting for {what}"),
            }
        }
    }

    pub fn expect_type(&self, ty: &str) -> Value {
        self.expect(ty, |v| v["type"] == ty)
    }

    pub fn expect_error(&self, code: &str) -> Value {
        self.expect(&format!("error {code}"), |v| v["type"] == "error" && v["code"] == code)
    }

    pub fn expect_link(&self, link: &str) -> Value {
        self.expect(&format!("link {link}"), |v| v["type"] == "state" && v["link"] == link)
    }

    pub fn expect_guidance(&self, text: &str) -> Value {
        self.expect(&format!("guidance {text:?}"), |v| v["type"] == "guidance" && v["text"] == text)
    }

    /// Everything that arrives until the client has been quiet for `quiet`.
    pub fn drain(&self, quiet: Duration) -> Vec<Value> {
        let mut out = Vec::new();
        while let Ok(msg) = self.rx.recv_timeout(quiet) {
            out.push(serde_json::to_value(&msg).unwrap());
        }
        out
    }
}

use nxtbridge_core::link::LinkState;
use nxtbridge_core::logicprog::RunStatus;
use nxtbridge_service::{guidance_for, Screen};

pub const GUIDANCE_GOLDEN: &str = include_str!("../golden/guidance.tsv");

fn run_label(run: &RunStatus) -> String {
    match run {
        RunStatus::Idle => "idle".into(),
        RunStatus::Running { step } => format!("running({step})"),
        RunStatus::Finished => "finished".into(),
        RunStatus::Cancelled { step } => format!("cancelled({step})"),
        RunStatus::Failed { step, .. } => format!("failed({step})"),
    }
}

/// guidance_for over every screen, link state and run status, as TSV.
pub fn guidance_table() -> String {
    let links = [
        LinkState::Disconnected,
        LinkState::Connecting,
        LinkState::Connected,
        LinkState::Faulted("reply timeout".into()),
    ];
    let runs = [
        RunStatus::Idle,
        RunStatus::Running { step: 0 },
        RunStatus::Running { step: 4 },
        RunStatus::Finished,
        RunStatus::Cancelled { step: 2 },
        RunStatus::Failed { step: 1, reason: "reply timeout".into() },
    ];
    let mut out = String::from("screen\tlink\trun\ttext\n");
    for screen in Screen::ALL {
        for link in &links {
            for run in &runs {
                let text = guidance_for(screen, link, run);
                out.push_str(&format!("{screen}\t{}\t{}\t{text}\n", link.name(), run_label(run)));
            }
        }
    }
    out
}
