mod common;

use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use common::*;
use nxtbridge_core::clock::{Clock, SystemClock};
use nxtbridge_core::drive::DriveConfig;
use nxtbridge_core::link::Link;
use nxtbridge_core::logicprog::*;
use nxtbridge_core::telegram::{OutputMode, RunState, Telegram};
use proptest::prelude::*;

fn is_brake(t: &Telegram) -> bool {
    t.output_state()
        .is_some_and(|s| s.power == 0 && s.run_state == RunState::Idle && s.mode.contains(OutputMode::BRAKE))
}

fn prog(steps: impl IntoIterator<Item = LogicStep>) -> LogicProgram {
    LogicProgram::from_steps("test", steps).unwrap()
}

#[test]
fn two_step_run_matches_compile() {
    let (sim, clock) = virtual_sim("two-step");
    let link = connected(&sim);
    let exec = Executor::new(link, clock.clone());
    let p = prog([LogicStep::forward(1000, 75).unwrap(), LogicStep::tone(440, 500).unwrap()]);
    let cfg = DriveConfig::default();
    let start = sim.log_len();
    let mut events = Vec::new();
    let status = exec.run(&p, &cfg, |i| events.push(i)).unwrap();
    assert_eq!(status, RunStatus::Finished);
    assert_eq!(events, vec![0, 1]);
    let expected = transcript(&compile(&p, &cfg));
    assert!(sim.wait_for_log_len(start + expected.len(), SETTLE));
    assert_eq!(telegrams_since(&sim, start), expected);
    assert_eq!(clock.now(), Duration::from_millis(1500));
}

#[test]
fn run_without_connection_sends_nothing() {
    let (sim, clock) = virtual_sim("not-connected");
    let exec = Executor::new(Link::new(quiet_config()), clock);
    let p = prog([LogicStep::forward(1000, 75).unwrap()]);
    assert_eq!(exec.run(&p, &DriveConfig::default(), |_| {}), Err(RunError::NotConnected));
    assert_eq!(sim.log_len(), 0);
}

fn spawn_run(
    exec: &Arc<Executor>,
    p: LogicProgram,
) -> thread::JoinHandle<(Result<RunStatus, RunError>, Vec<usize>)> {
    let exec = exec.clone();
    thread::spawn(move || {
        let mut events = Vec::new();
        let r = exec.run(&p, &DriveConfig::default(), |i| events.push(i));
        (r, events)
    })
}

fn wait_until(mut f: impl FnMut() -> bool) {
    let deadline = Instant::now() + SETTLE;
    while !f() {
        assert!(Instant::now() < deadline, "condition not reached");
        thread::sleep(Duration::from_millis(2));
    }
}

#[test]
fn cancel_long_forward_brakes() {
    let sim = wall_sim("cancel-forward");
    let link = connected(&sim);
    let start = sim.log_len();
    let exec = Arc::new(Executor::new(link, SystemClock::shared()));
    let run = spawn_run(&exec, prog([LogicStep::forward(60_000, 75).unwrap()]));
    assert!(sim.wait_for_log_len(start + 2, SETTLE));
    exec.cancel();
    exec.cancel();
    let (status, events) = run.join().unwrap();
    assert_eq!(status, Ok(RunStatus::Cancelled { step: 0 }));
    assert_eq!(events, vec![0]);
    assert!(sim.wait_for_log_len(start + 3, SETTLE));
    let log = telegrams_since(&sim, start);
    assert_eq!(log.len(), 3);
    assert!(is_brake(log.last().unwrap()));
    assert!(!exec.is_running());
}

#[test]
fn cancel_during_pause_reports_that_step() {
    let sim = wall_sim("cancel-pause");
    let link = connected(&sim);
    let exec = Arc::new(Executor::new(link, SystemClock::shared()));
    let p = prog([LogicStep::tone(440, 10).unwrap(), LogicStep::pause(60_000).unwrap()]);
    let start = sim.log_len();
    let run = spawn_run(&exec, p);
    assert!(sim.wait_for_log_len(start + 1, SETTLE));
    thread::sleep(Duration::from_millis(40));
    exec.cancel();
    let (status, events) = run.join().unwrap();
    assert_eq!(status, Ok(RunStatus::Cancelled { step: 1 }));
    assert_eq!(events, vec![0, 1]);
    assert!(sim.wait_for_log_len(start + 2, SETTLE));
    assert!(is_brake(telegrams_since(&sim, start).last().unwrap()));
}

#[test]
fn cancel_when_idle_is_a_noop() {
    let (sim, clock) = virtual_sim("cancel-idle");
    let exec = Executor::new(connected(&sim), clock);
    exec.cancel();
    let p = prog([LogicStep::pause(100).unwrap()]);
    assert_eq!(exec.run(&p, &DriveConfig::default(), |_| {}), Ok(RunStatus::Finished));
}

#[test]
fn second_run_on_same_link_is_rejected() {
    let sim = wall_sim("already");
    let link = connected(&sim);
    let exec = Arc::new(Executor::new(link.clone(), SystemClock::shared()));
    let start = sim.log_len();
    let run = spawn_run(&exec, prog([LogicStep::forward(60_000, 50).unwrap()]));
    assert!(sim.wait_for_log_len(start + 2, SETTLE));
    let p = prog([LogicStep::pause(1).unwrap()]);
    assert_eq!(exec.run(&p, &DriveConfig::default(), |_| {}), Err(RunError::AlreadyRunning));
    let other = Executor::new(link, SystemClock::shared());
    assert_eq!(other.run(&p, &DriveConfig::default(), |_| {}), Err(RunError::AlreadyRunning));
    exec.cancel();
    assert_eq!(run.join().unwrap().0, Ok(RunStatus::Cancelled { step: 0 }));
}

#[test]
fn link_loss_fails_the_run() {
    let sim = wall_sim("link-loss");
    let link = connected(&sim);
    let exec = Arc::new(Executor::new(link.clone(), SystemClock::shared()));
    let start = sim.log_len();
    let run =
        spawn_run(&exec, prog([LogicStep::forward(200, 50).unwrap(), LogicStep::forward(200, 50).unwrap()]));
    assert!(sim.wait_for_log_len(start + 2, SETTLE));
    sim.shutdown();
    let (status, events) = run.join().unwrap();
    match status.unwrap() {
        RunStatus::Failed { step, reason } => {
            assert_eq!(step, 0);
            assert!(!reason.is_empty());
        }
        other => panic!("expected failure, got {other:?}"),
    }
    assert_eq!(events, vec![0]);
    assert!(!link.state().is_connected());
}

#[test]
fn wall_clock_bounds() {
    let sim = wall_sim("wall-clock");
    let exec = Executor::new(connected(&sim), SystemClock::shared());
    let p = prog([
        LogicStep::forward(120, 60).unwrap(),
        LogicStep::pause(80).unwrap(),
        LogicStep::tone(880, 60).unwrap(),
    ]);
    let dwell = total_dwell(&compile(&p, &DriveConfig::default()));
    let t0 = Instant::now();
    assert_eq!(exec.run(&p, &DriveConfig::default(), |_| {}), Ok(RunStatus::Finished));
    let took = t0.elapsed();
    assert!(took >= dwell, "{took:?} < {dwell:?}");
    assert!(took <= dwell + Duration::from_millis(250) * p.len() as u32, "{took:?}");
}

#[test]
fn progress_wait_is_observable_from_another_thread() {
    let sim = wall_sim("progress");
    let exec = Arc::new(Executor::new(connected(&sim), SystemClock::shared()));
    let run = spawn_run(&exec, prog([LogicStep::pause(30_000).unwrap()]));
    wait_until(|| exec.is_running());
    exec.cancel();
    assert_eq!(run.join().unwrap().0, Ok(RunStatus::Cancelled { step: 0 }));
}

fn arb_step() -> impl Strategy<Value = LogicStep> {
    let ms = prop_oneof![4 => 1u32..=2_000, 1 => 1u32..=MAX_STEP_MS];
    prop_oneof![
        (0usize..4, ms.clone(), 1u8..=100).prop_map(|(m, ms, power)| {
            let motion = [Motion::Forward, Motion::Backward, Motion::SpinLeft, Motion::SpinRight][m];
            LogicStep::drive(motion, ms, power).unwrap()
        }),
        ms.clone().prop_map(|ms| LogicStep::pause(ms).unwrap()),
        (200u16..=14_000, ms).prop_map(|(hz, ms)| LogicStep::tone(hz, ms).unwrap()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// The wire sees exactly the compiled transcript, ending in brakes.
    #[test]
    fn execution_fidelity(steps in prop::collection::vec(arb_step(), 0..12)) {
        let (sim, clock) = virtual_sim("fidelity");
        let exec = Executor::new(connected(&sim), clock);
        let p = prog(steps);
        let cfg = DriveConfig::default();
        let start = sim.log_len();
        let mut events = Vec::new();
        prop_assert_eq!(exec.run(&p, &cfg, |i| events.push(i)), Ok(RunStatus::Finished));
        prop_assert_eq!(events, (0..p.len()).collect::<Vec<_>>());
        let expected = transcript(&compile(&p, &cfg));
        prop_assert!(sim.wait_for_log_len(start + expected.len(), SETTLE));
        let log = telegrams_since(&sim, start);
        prop_assert_eq!(&log, &expected);
        prop_assert!(is_brake(log.last().unwrap()));
    }
}
