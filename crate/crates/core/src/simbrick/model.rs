use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::telegram::{
    Command, OutputMode, Port, ReplyBody, ReplyPayload, RunState, SetOutputState, Telegram,
};

/// Sleep limit reported in KeepAlive replies (the brick's default 10 minutes).
pub const SLEEP_LIMIT_MS: u32 = 600_000;

/// Interval between periodic trace rows.
const TRACE_PERIOD: Duration = Duration::from_millis(10);

pub const TRACE_HEADER: &str = "t_s,x,y,theta,power_l,power_r";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub wheel_radius_m: f64,
    pub axle_length_m: f64,
    /// Wheel angular speed at power 100.
    pub omega_max_rad_s: f64,
    pub battery_mv: u16,
    pub timestep_s: f64,
    #[serde(with = "port_letter")]
    pub left_port: Port,
    #[serde(with = "port_letter")]
    pub right_port: Port,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            wheel_radius_m: 0.028,
            axle_length_m: 0.112,
            omega_max_rad_s: 10.0,
            battery_mv: 8000,
            timestep_s: 0.001,
            left_port: Port::B,
            right_port: Port::C,
        }
    }
}

mod port_letter {
    use super::Port;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(p: &Port, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(p)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Port, D::Error> {
        match String::deserialize(d)?.as_str() {
            "A" | "a" => Ok(Port::A),
            "B" | "b" => Ok(Port::B),
            "C" | "c" => Ok(Port::C),
            other => Err(serde::de::Error::custom(format!("unknown motor port `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid simulator config: {0}")]
pub struct SimConfigError(pub String);

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimConfigError> {
        let fields = [
            ("wheel_radius_m", self.wheel_radius_m),
            ("axle_length_m", self.axle_length_m),
            ("omega_max_rad_s", self.omega_max_rad_s),
            ("timestep_s", self.timestep_s),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(SimConfigError(format!("{name} must be positive, got {v}")));
            }
        }
        if self.battery_mv == 0 {
            return Err(SimConfigError("battery_mv must be positive".into()));
        }
        if self.timestep_s > 0.01 {
            return Err(SimConfigError(format!("timestep_s {} exceeds 0.01", self.timestep_s)));
        }
        if self.timestep() < Duration::from_micros(1) {
            return Err(SimConfigError("timestep_s below one microsecond".into()));
        }
        if self.left_port == self.right_port {
            return Err(SimConfigError("left and right ports must differ".into()));
        }
        Ok(())
    }

    pub fn timestep(&self) -> Duration {
        Duration::from_secs_f64(self.timestep_s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct SimPose {
    pub x_m: f64,
    pub y_m: f64,
    /// Normalized to (-pi, pi].
    pub theta_rad: f64,
    pub tacho_left_deg: f64,
    pub tacho_right_deg: f64,
    pub t_s: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LogEntry {
    Telegram(Telegram),
    /// A complete frame whose contents failed to decode.
    Malformed {
        bytes: Vec<u8>,
        error: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogRecord {
    pub at: Duration,
    pub entry: LogEntry,
}

impl LogRecord {
    pub fn t_s(&self) -> f64 {
        self.at.as_secs_f64()
    }

    pub fn telegram(&self) -> Option<&Telegram> {
        match &self.entry {
            LogEntry::Telegram(t) => Some(t),
            LogEntry::Malformed { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct TraceRow {
    t_s: f64,
    x: f64,
    y: f64,
    theta: f64,
    power_l: i8,
    power_r: i8,
}

fn normalize_angle(mut a: f64) -> f64 {
    while a > PI {
        a -= TAU;
    }
    while a <= -PI {
        a += TAU;
    }
    a
}

fn port_index(p: Port) -> Option<usize> {
    match p {
        Port::A => Some(0),
        Port::B => Some(1),
        Port::C => Some(2),
        Port::All => None,
    }
}

/// Differential-drive robot driven by direct-command telegrams.
///
/// Time only moves through [`SimBrick::advance_to`]; the model never reads a
/// clock itself, so the same telegram timeline always yields the same poses.
#[derive(Debug, Clone)]
pub struct SimBrick {
    cfg: SimConfig,
    step: Duration,
    now: Duration,
    pose: SimPose,
    outputs: [SetOutputState; 3],
    last_tone: Option<(u16, u16)>,
    log: Vec<LogRecord>,
    trace: Option<Vec<TraceRow>>,
    next_trace: Duration,
}

impl SimBrick {
    pub fn new(cfg: SimConfig) -> Result<Self, SimConfigError> {
        cfg.validate()?;
        Ok(SimBrick {
            step: cfg.timestep(),
            cfg,
            now: Duration::ZERO,
            pose: SimPose::default(),
            outputs: [
                SetOutputState::brake(Port::A),
                SetOutputState::brake(Port::B),
                SetOutputState::brake(Port::C),
            ],
            last_tone: None,
            log: Vec::new(),
            trace: None,
            next_trace: Duration::ZERO,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn now(&self) -> Duration {
        self.now
    }

    pub fn pose(&self) -> SimPose {
        self.pose
    }

    pub fn log(&self) -> &[LogRecord] {
        &self.log
    }

    pub fn last_tone(&self) -> Option<(u16, u16)> {
        self.last_tone
    }

    pub fn enable_trace(&mut self) {
        if self.trace.is_none() {
            self.trace = Some(Vec::new());
            self.next_trace = self.now;
            self.record_trace();
        }
    }

    fn effective_power(&self, port: Port) -> i8 {
        let s = &self.outputs[port_index(port).expect("wheel ports are concrete")];
        if s.run_state == RunState::Running && s.mode.contains(OutputMode::MOTOR_ON) {
            s.power
        } else {
            0
        }
    }

    /// Current `(left, right)` wheel power in percent.
    pub fn wheel_powers(&self) -> (i8, i8) {
        (self.effective_power(self.cfg.left_port), self.effective_power(self.cfg.right_port))
    }

    /// Directly sets wheel powers, bypassing the wire. For kinematics tests.
    pub fn set_wheel_powers(&mut self, left: i8, right: i8) {
        for (port, power) in [(self.cfg.left_port, left), (self.cfg.right_port, right)] {
            let idx = port_index(port).expect("wheel ports are concrete");
            self.outputs[idx] = SetOutputState {
                port,
                power,
                mode: OutputMode::MOTOR_ON | OutputMode::REGULATED,
                regulation: crate::telegram::Regulation::Speed,
                turn_ratio: 0,
                run_state: if power == 0 { RunState::Idle } else { RunState::Running },
                tacho_limit: 0,
            };
        }
    }

    fn integrate(&mut self, dt: Duration) {
        let dt_s = dt.as_secs_f64();
        let (pl, pr) = self.wheel_powers();
        let omega_l = f64::from(pl) / 100.0 * self.cfg.omega_max_rad_s;
        let omega_r = f64::from(pr) / 100.0 * self.cfg.omega_max_rad_s;
        let r = self.cfg.wheel_radius_m;
        let v = r * (omega_l + omega_r) / 2.0;
        let omega_body = r * (omega_r - omega_l) / self.cfg.axle_length_m;

        let p = &mut self.pose;
        p.x_m += v * p.theta_rad.cos() * dt_s;
        p.y_m += v * p.theta_rad.sin() * dt_s;
        p.theta_rad = normalize_angle(p.theta_rad + omega_body * dt_s);
        p.tacho_left_deg += (omega_l * dt_s).to_degrees();
        p.tacho_right_deg += (omega_r * dt_s).to_degrees();
        self.now += dt;
        p.t_s = self.now.as_secs_f64();

        if self.trace.is_some() && self.now >= self.next_trace {
            self.record_trace();
        }
    }

    fn record_trace(&mut self) {
        let (power_l, power_r) = self.wheel_powers();
        let row = TraceRow {
            t_s: self.now.as_secs_f64(),
            x: self.pose.x_m,
            y: self.pose.y_m,
            theta: self.pose.theta_rad,
            power_l,
            power_r,
        };
        if let Some(trace) = self.trace.as_mut() {
            trace.push(row);
            while self.next_trace <= self.now {
                self.next_trace += TRACE_PERIOD;
            }
        }
    }

    /// Integrates with the fixed timestep up to `t`; a final partial step
    /// covers any remainder. Times in the past are ignored.
    pub fn advance_to(&mut self, t: Duration) -> SimPose {
        while self.now + self.step <= t {
            self.integrate(self.step);
        }
        if t > self.now {
            self.integrate(t - self.now);
        }
        self.pose
    }

    pub fn step(&mut self, dt: Duration) -> SimPose {
        self.advance_to(self.now + dt)
    }

    /// Advances to `at` (or stays at the current time if `at` is earlier),
    /// logs the telegram, applies it, and returns any reply.
    pub fn apply(&mut self, at: Duration, t: Telegram) -> Option<Telegram> {
        self.advance_to(at);
        let reply = match &t {
            Telegram::Command { expects_reply, command } => {
                let payload = match command {
                    Command::SetOutputState(s) => {
                        for motor in [Port::A, Port::B, Port::C] {
                            if s.port.addresses(motor) {
                                let idx = port_index(motor).expect("concrete port");
                                self.outputs[idx] = SetOutputState { port: motor, ..*s };
                            }
                        }
                        ReplyPayload::Empty
                    }
                    Command::PlayTone(tone) => {
                        self.last_tone = Some((tone.frequency_hz, tone.duration_ms));
                        ReplyPayload::Empty
                    }
                    Command::GetBatteryLevel => ReplyPayload::Battery { millivolts: self.cfg.battery_mv },
                    Command::KeepAlive => ReplyPayload::KeepAlive { sleep_limit_ms: SLEEP_LIMIT_MS },
                };
                expects_reply
                    .then(|| Telegram::Reply(ReplyBody { opcode: command.opcode(), status: 0, payload }))
            }
            Telegram::Reply(_) | Telegram::Unknown { .. } => None,
        };
        self.log.push(LogRecord { at: self.now, entry: LogEntry::Telegram(t) });
        if self.trace.is_some() {
            self.record_trace();
        }
        reply
    }

    pub fn log_malformed(&mut self, at: Duration, bytes: Vec<u8>, error: String) {
        self.advance_to(at);
        self.log.push(LogRecord { at: self.now, entry: LogEntry::Malformed { bytes, error } });
    }

    /// Trace as CSV, header first.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from(TRACE_HEADER);
        out.push('\n');
        for row in self.trace.iter().flatten() {
            let _ = writeln!(
                out,
                "{:.6},{},{},{},{},{}",
                row.t_s, row.x, row.y, row.theta, row.power_l, row.power_r
            );
        }
        out
    }
}
