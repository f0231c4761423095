mod common;

use std::net::TcpListener;
use std::sync::Arc;
use std::time::Duration;

use common::*;
use nxtbridge_core::clock::{SystemClock, VirtualClock};
use nxtbridge_core::drive::DriveConfig;
use nxtbridge_core::logicprog::{compile, transcript, LogicProgram, LogicStep};
use nxtbridge_core::simbrick::{serve_with_clock, SimConfig, SimHandle};
use nxtbridge_core::telegram::{OutputMode, RunState, Telegram};
use nxtbridge_service::{SessionConfig, SessionHandle};
use serde_json::json;

fn sim_with(clock: Arc<dyn nxtbridge_core::clock::Clock>) -> SimHandle {
    serve_with_clock(&unique_inproc("sim"), SimConfig::default(), clock).unwrap()
}

fn controller(session: &SessionHandle) -> TestClient {
    let c = TestClient::join(session);
    c.send(session, json!({"type":"hello","role":"controller"}));
    c.expect("controller state", |v| v["type"] == "state" && v["role"] == "controller");
    c
}

fn connect(session: &SessionHandle, c: &TestClient, sim: &SimHandle) {
    c.send(session, json!({"type":"connect","target": sim.endpoint().to_string()}));
    c.expect_link("connected");
}

fn telegrams_since(sim: &SimHandle, from: usize) -> Vec<Telegram> {
    sim.snapshot().log[from..].iter().filter_map(|r| r.telegram().cloned()).collect()
}

fn is_brake(t: &Telegram) -> bool {
    t.output_state()
        .is_some_and(|s| s.power == 0 && s.run_state == RunState::Idle && s.mode.contains(OutputMode::BRAKE))
}

#[test]
fn new_client_gets_state_and_guidance() {
    let session = SessionHandle::spawn(quiet());
    let c = TestClient::join(&session);
    let state = c.expect_type("state");
    assert_eq!(
        state,
        json!({"type":"state","link":"disconnected","screen":"home","run":{"status":"idle"},"role":"observer"})
    );
    assert_eq!(c.expect_type("guidance")["text"], "Choose how you want to control the robot");
}

#[test]
fn observers_cannot_command() {
    let session = SessionHandle::spawn(quiet());
    let c = TestClient::join(&session);
    c.send(&session, json!({"type":"drive","cmd":"forward"}));
    c.expect_error("not-controller");
    let first = controller(&session);
    let second = TestClient::join(&session);
    second.send(&session, json!({"type":"hello","role":"controller"}));
    second.expect_error("not-controller");
    // Stepping down frees the slot.
    first.send(&session, json!({"type":"hello","role":"observer"}));
    first.expect("observer state", |v| v["type"] == "state" && v["role"] == "observer");
    second.send(&session, json!({"type":"hello","role":"controller"}));
    second.expect("controller state", |v| v["type"] == "state" && v["role"] == "controller");
}

#[test]
fn dead_endpoint_warns_transport_off() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let session = SessionHandle::spawn(quiet());
    let c = controller(&session);
    c.send(&session, json!({"type":"connect","target": format!("tcp:127.0.0.1:{port}")}));
    c.expect_link("faulted");
    let w = c.expect_type("warning");
    assert_eq!(w["code"], "transport-off");
    assert!(w["text"].as_str().unwrap().contains("press CONNECT again"));
    c.send(&session, json!({"type":"screen","screen":"arrows"}));
    c.expect_guidance("Could not reach the robot. Press CONNECT to try again");
}

#[test]
fn speech_screen_after_connect() {
    let sim = sim_with(SystemClock::shared());
    let session = SessionHandle::spawn(quiet());
    let c = controller(&session);
    c.send(&session, json!({"type":"screen","screen":"speech"}));
    c.expect_guidance("Press CONNECT to connect to the robot");
    connect(&session, &c, &sim);
    c.expect_guidance("Press the Microphone to Give Commands");
}

#[test]
fn drive_puts_two_telegrams_on_the_wire() {
    let sim = sim_with(SystemClock::shared());
    let session = SessionHandle::spawn(quiet());
    let c = controller(&session);
    let observer = TestClient::join(&session);
    connect(&session, &c, &sim);
    let start = sim.log_len();
    c.send(&session, json!({"type":"drive","cmd":"forward"}));
    c.expect_type("state");
    observer.expect("observer sees state", |v| v["type"] == "state" && v["link"] == "connected");
    assert!(sim.wait_for_log_len(start + 2, WAIT));
    let log = telegrams_since(&sim, start);
    assert_eq!(log.len(), 2);
    let powers: Vec<_> = log.iter().map(|t| t.output_state().unwrap().power).collect();
    assert_eq!(powers, vec![75, 75]);
    c.send(&session, json!({"type":"drive","cmd":"stop"}));
    assert!(sim.wait_for_log_len(start + 4, WAIT));
    assert!(telegrams_since(&sim, start)[2..].iter().all(is_brake));
}

#[test]
fn motion_needs_a_connection() {
    let sim = sim_with(SystemClock::shared());
    let session = SessionHandle::spawn(quiet());
    let c = controller(&session);
    c.send(&session, json!({"type":"drive","cmd":"left"}));
    c.expect_error("not-connected");
    c.send(&session, json!({"type":"tilt","pitch":30.0,"roll":0.0}));
    c.expect_error("not-connected");
    c.send(&session, json!({"type":"speech","utterance":"forward"}));
    c.expect_error("not-connected");
    c.send(&session, json!({"type":"drive","cmd":"fly"}));
    c.expect_error("schema");
    assert_eq!(sim.log_len(), 0);
}

#[test]
fn speech_and_tilt_drive() {
    let sim = sim_with(SystemClock::shared());
    let session = SessionHandle::spawn(quiet());
    let c = controller(&session);
    connect(&session, &c, &sim);
    c.send(&session, json!({"type":"speech","utterance":"dance"}));
    let nomatch = c.expect_type("speech.nomatch");
    assert_eq!(nomatch["utterance"], "dance");
    assert!(nomatch["commands"].as_array().unwrap().contains(&json!("forward")));

    let start = sim.log_len();
    c.send(&session, json!({"type":"speech","utterance":"  Left "}));
    c.expect_type("state");
    c.send(&session, json!({"type":"tilt","pitch":45.0,"roll":0.0}));
    c.expect_type("state");
    assert!(sim.wait_for_log_len(start + 4, WAIT));
    let powers: Vec<_> =
        telegrams_since(&sim, start).iter().map(|t| t.output_state().unwrap().power).collect();
    assert_eq!(powers, vec![-75, 75, 100, 100]);
}

#[test]
fn program_run_matches_compile_and_reports_progress() {
    let clock = Arc::new(VirtualClock::new());
    let sim = sim_with(clock.clone());
    let session = SessionHandle::spawn(SessionConfig { clock, ..quiet() });
    let c = controller(&session);
    connect(&session, &c, &sim);
    c.send(&session, json!({"type":"screen","screen":"logic_creator"}));
    c.expect_guidance("Add steps, then press RUN");

    let program = LogicProgram::from_steps(
        "square-ish",
        [
            LogicStep::forward(1000, 50).unwrap(),
            LogicStep::pause(300).unwrap(),
            LogicStep::tone(440, 200).unwrap(),
        ],
    )
    .unwrap();
    let doc: serde_json::Value = serde_json::from_str(&program.serialize()).unwrap();
    c.send(&session, json!({"type":"program.load","program": doc}));
    c.expect("program state", |v| v["type"] == "state" && v["program"]["steps"] == 3);

    let start = sim.log_len();
    c.send(&session, json!({"type":"program.run"}));
    for i in 0..3 {
        assert_eq!(c.expect_type("progress")["step"], i);
    }
    c.expect("finished", |v| v["type"] == "state" && v["run"]["status"] == "finished");
    c.expect_guidance("Program finished. Press RUN to run it again");
    let expected = transcript(&compile(&program, &DriveConfig::default()));
    assert!(sim.wait_for_log_len(start + expected.len(), WAIT));
    assert_eq!(telegrams_since(&sim, start), expected);
}

#[test]
fn program_file_text_is_accepted() {
    let session = SessionHandle::spawn(quiet());
    let c = controller(&session);
    let text = r#"{"version":1,"name":"t","steps":[{"op":"pause","ms":5}]}"#;
    c.send(&session, json!({"type":"program.load","program": text}));
    c.expect("loaded", |v| v["type"] == "state" && v["program"]["name"] == "t");
    c.send(
        &session,
        json!({"type":"program.load","program": {"version":1,"name":"t","steps":[{"op":"pause","ms":0}]}}),
    );
    c.expect_error("schema");
    c.send(&session, json!({"type":"program.run"}));
    c.expect_error("not-connected");
}

#[test]
fn run_guards_and_cancel() {
    let sim = sim_with(SystemClock::shared());
    let session = SessionHandle::spawn(quiet());
    let c = controller(&session);
    connect(&session, &c, &sim);
    c.send(&session, json!({"type":"program.run"}));
    c.expect_error("no-program");
    let long = json!({"version":1,"name":"long","steps":[{"op":"forward","ms":60000,"power":40}]});
    c.send(&session, json!({"type":"program.load","program": long}));
    c.expect_type("state");
    let start = sim.log_len();
    c.send(&session, json!({"type":"program.run"}));
    c.expect_type("progress");
    c.send(&session, json!({"type":"program.run"}));
    c.expect_error("already-running");
    c.send(&session, json!({"type":"drive","cmd":"forward"}));
    c.expect_error("program-running");
    c.send(&session, json!({"type":"program.load","program": long}));
    c.expect_error("program-running");
    c.send(&session, json!({"type":"program.cancel"}));
    let done = c.expect("cancelled", |v| v["type"] == "state" && v["run"]["status"] == "cancelled");
    assert_eq!(done["run"]["step"], 0);
    assert!(sim.wait_for_log_len(start + 3, WAIT));
    assert!(is_brake(telegrams_since(&sim, start).last().unwrap()));
    // Cancelling again is harmless.
    c.send(&session, json!({"type":"program.cancel"}));
    c.expect_type("state");
}

#[test]
fn controller_leaving_stops_the_robot() {
    let sim = sim_with(SystemClock::shared());
    let session = SessionHandle::spawn(quiet());
    let c = controller(&session);
    connect(&session, &c, &sim);
    let start = sim.log_len();
    c.send(&session, json!({"type":"drive","cmd":"forward"}));
    c.expect_type("state");
    session.leave(c.id);
    assert!(sim.wait_for_log_len(start + 4, WAIT));
    let log = telegrams_since(&sim, start);
    assert!(log[2..].iter().all(is_brake));
    let next = controller(&session);
    next.send(&session, json!({"type":"drive","cmd":"backward"}));
    next.expect_type("state");
}

#[test]
fn controller_leaving_cancels_a_run() {
    let sim = sim_with(SystemClock::shared());
    let session = SessionHandle::spawn(quiet());
    let c = controller(&session);
    let watcher = TestClient::join(&session);
    connect(&session, &c, &sim);
    let long = json!({"version":1,"name":"long","steps":[{"op":"forward","ms":60000,"power":40}]});
    c.send(&session, json!({"type":"program.load","program": long}));
    c.expect_type("state");
    let start = sim.log_len();
    c.send(&session, json!({"type":"program.run"}));
    c.expect_type("progress");
    session.leave(c.id);
    watcher.expect("cancelled", |v| v["type"] == "state" && v["run"]["status"] == "cancelled");
    assert!(sim.wait_for_log_len(start + 3, WAIT));
    assert!(is_brake(telegrams_since(&sim, start).last().unwrap()));
}

#[test]
fn disconnect_stops_and_closes() {
    let sim = sim_with(SystemClock::shared());
    let session = SessionHandle::spawn(quiet());
    let c = controller(&session);
    connect(&session, &c, &sim);
    let start = sim.log_len();
    c.send(&session, json!({"type":"disconnect"}));
    c.expect_link("disconnected");
    assert!(sim.wait_for_log_len(start + 1, WAIT));
    assert_eq!(telegrams_since(&sim, start), vec![Telegram::stop_all()]);
    c.send(&session, json!({"type":"disconnect"}));
    c.expect_link("disconnected");
}

#[test]
fn connect_twice_is_rejected() {
    let sim = sim_with(SystemClock::shared());
    let session = SessionHandle::spawn(quiet());
    let c = controller(&session);
    connect(&session, &c, &sim);
    c.send(&session, json!({"type":"connect","target": sim.endpoint().to_string()}));
    c.expect_error("already-connected");
    c.send(&session, json!({"type":"connect"}));
    c.expect_error("no-target");
    c.send(&session, json!({"type":"connect","target":"bluetooth:nxt"}));
    c.expect_error("schema");
}

#[test]
fn default_target_is_used() {
    let sim = sim_with(SystemClock::shared());
    let session =
        SessionHandle::spawn(SessionConfig { default_target: Some(sim.endpoint().clone()), ..quiet() });
    let c = controller(&session);
    c.send(&session, json!({"type":"connect"}));
    c.expect_link("connected");
}

#[test]
fn telemetry_only_while_connected() {
    let sim = sim_with(SystemClock::shared());
    let session =
        SessionHandle::spawn(SessionConfig { telemetry_period: Duration::from_millis(40), ..quiet() });
    let c = controller(&session);
    assert!(c.drain(Duration::from_millis(200)).iter().all(|v| v["type"] != "telemetry"));
    connect(&session, &c, &sim);
    let t = c.expect_type("telemetry");
    assert_eq!(t["battery_mv"], 8000);
    assert_eq!(t["pose"]["x_m"], 0.0);
    c.send(&session, json!({"type":"disconnect"}));
    c.expect_link("disconnected");
    c.drain(Duration::from_millis(60));
    assert!(c.drain(Duration::from_millis(200)).iter().all(|v| v["type"] != "telemetry"));
}

#[test]
fn telemetry_survives_a_lost_brick() {
    let sim = sim_with(SystemClock::shared());
    let session =
        SessionHandle::spawn(SessionConfig { telemetry_period: Duration::from_millis(40), ..quiet() });
    let c = controller(&session);
    connect(&session, &c, &sim);
    c.expect_type("telemetry");
    sim.shutdown();
    c.expect_link("faulted");
}
