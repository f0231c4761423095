//! Direct-control modalities (arrow keys, tilt, speech) mapped to motor power.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::telegram::{Command, OutputMode, Port, Regulation, RunState, SetOutputState, Telegram};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriveCommand {
    Forward,
    Backward,
    SpinLeft,
    SpinRight,
    Stop,
}

impl DriveCommand {
    pub const ALL: [DriveCommand; 5] = [
        DriveCommand::Forward,
        DriveCommand::Backward,
        DriveCommand::SpinLeft,
        DriveCommand::SpinRight,
        DriveCommand::Stop,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DriveCommand::Forward => "forward",
            DriveCommand::Backward => "backward",
            DriveCommand::SpinLeft => "spin_left",
            DriveCommand::SpinRight => "spin_right",
            DriveCommand::Stop => "stop",
        }
    }
}

impl fmt::Display for DriveCommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DriveCommand {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "forward" => Ok(DriveCommand::Forward),
            "backward" => Ok(DriveCommand::Backward),
            "spin_left" | "left" => Ok(DriveCommand::SpinLeft),
            "spin_right" | "right" => Ok(DriveCommand::SpinRight),
            "stop" => Ok(DriveCommand::Stop),
            other => Err(format!("unknown drive command `{other}`")),
        }
    }
}

/// Device orientation in degrees. Nose-down pitch and right-edge-down roll
/// are positive.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Tilt {
    pub pitch_deg: f64,
    pub roll_deg: f64,
}

impl Tilt {
    pub fn new(pitch_deg: f64, roll_deg: f64) -> Self {
        Tilt { pitch_deg, roll_deg }
    }

    /// Non-finite angles become 0; magnitudes are capped at 90.
    pub fn sanitized(self) -> Self {
        fn clean(a: f64) -> f64 {
            if a.is_finite() {
                a.clamp(-90.0, 90.0)
            } else {
                0.0
            }
        }
        Tilt { pitch_deg: clean(self.pitch_deg), roll_deg: clean(self.roll_deg) }
    }
}

/// Left/right motor power in percent, always within -100..=100.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize)]
pub struct PowerPair {
    left: i8,
    right: i8,
}

impl PowerPair {
    pub const STOP: PowerPair = PowerPair { left: 0, right: 0 };

    /// Clamps both sides into range.
    pub fn new(left: i32, right: i32) -> Self {
        PowerPair { left: left.clamp(-100, 100) as i8, right: right.clamp(-100, 100) as i8 }
    }

    pub fn left(self) -> i8 {
        self.left
    }

    pub fn right(self) -> i8 {
        self.right
    }

    pub fn is_stop(self) -> bool {
        self == Self::STOP
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid drive config: {0}")]
pub struct ConfigError(pub String);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriveConfig {
    pub base_power: u8,
    pub deadzone_deg: f64,
    pub full_scale_deg: f64,
    pub left_port: Port,
    pub right_port: Port,
}

impl Default for DriveConfig {
    fn default() -> Self {
        DriveConfig {
            base_power: 75,
            deadzone_deg: 10.0,
            full_scale_deg: 45.0,
            left_port: Port::B,
            right_port: Port::C,
        }
    }
}

impl DriveConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(1..=100).contains(&self.base_power) {
            return Err(ConfigError(format!("base_power {} not in 1..=100", self.base_power)));
        }
        let ok = self.deadzone_deg.is_finite()
            && self.full_scale_deg.is_finite()
            && 0.0 <= self.deadzone_deg
            && self.deadzone_deg < self.full_scale_deg
            && self.full_scale_deg <= 90.0;
        if !ok {
            return Err(ConfigError(format!(
                "need 0 <= deadzone ({}) < full_scale ({}) <= 90",
                self.deadzone_deg, self.full_scale_deg
            )));
        }
        for port in [self.left_port, self.right_port] {
            if port == Port::All {
                return Err(ConfigError("motor port must be A, B or C".into()));
            }
        }
        if self.left_port == self.right_port {
            return Err(ConfigError("left and right ports must differ".into()));
        }
        Ok(())
    }

    pub fn with_base_power(mut self, power: u8) -> Self {
        self.base_power = power;
        self
    }
}

/// Arrow-key style mapping: spin in place for left/right.
pub fn map_command(cmd: DriveCommand, cfg: &DriveConfig) -> PowerPair {
    let p = i32::from(cfg.base_power);
    match cmd {
        DriveCommand::Forward => PowerPair::new(p, p),
        DriveCommand::Backward => PowerPair::new(-p, -p),
        DriveCommand::SpinLeft => PowerPair::new(-p, p),
        DriveCommand::SpinRight => PowerPair::new(p, -p),
        DriveCommand::Stop => PowerPair::STOP,
    }
}

/// Linear deadzone/full-scale law, in percent (-100..=100).
fn tilt_axis(angle: f64, cfg: &DriveConfig) -> f64 {
    let mag = angle.abs();
    if mag < cfg.deadzone_deg {
        return 0.0;
    }
    let frac = ((mag - cfg.deadzone_deg) / (cfg.full_scale_deg - cfg.deadzone_deg)).min(1.0);
    angle.signum() * frac * 100.0
}

/// Unrounded `(left, right)` before clamping to integers.
pub fn tilt_mix(t: Tilt, cfg: &DriveConfig) -> (f64, f64) {
    let t = t.sanitized();
    let forward = tilt_axis(t.pitch_deg, cfg);
    let turn = tilt_axis(t.roll_deg, cfg);
    ((forward + turn).clamp(-100.0, 100.0), (forward - turn).clamp(-100.0, 100.0))
}

pub fn map_tilt(t: Tilt, cfg: &DriveConfig) -> PowerPair {
    let (l, r) = tilt_mix(t, cfg);
    // f64::round rounds half away from zero.
    PowerPair::new(l.round() as i32, r.round() as i32)
}

fn motor_telegram(port: Port, power: i8) -> Telegram {
    Telegram::no_reply(Command::SetOutputState(SetOutputState {
        port,
        power,
        mode: OutputMode::MOTOR_ON | OutputMode::BRAKE | OutputMode::REGULATED,
        regulation: Regulation::Speed,
        turn_ratio: 0,
        run_state: RunState::Running,
        tacho_limit: 0,
    }))
}

fn brake_telegram(port: Port) -> Telegram {
    Telegram::no_reply(Command::SetOutputState(SetOutputState::brake(port)))
}

/// Two no-reply SetOutputState telegrams, left port first.
pub fn to_telegrams(p: PowerPair, cfg: &DriveConfig) -> [Telegram; 2] {
    if p.is_stop() {
        brake_telegrams(cfg)
    } else {
        [motor_telegram(cfg.left_port, p.left), motor_telegram(cfg.right_port, p.right)]
    }
}

pub fn brake_telegrams(cfg: &DriveConfig) -> [Telegram; 2] {
    [brake_telegram(cfg.left_port), brake_telegram(cfg.right_port)]
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("vocabulary line {line}: {reason}")]
pub struct VocabularyError {
    pub line: usize,
    pub reason: String,
}

/// Closed utterance → command table. Lookups trim and ignore case.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    entries: BTreeMap<String, DriveCommand>,
}

fn normalize(u: &str) -> String {
    u.trim().to_lowercase()
}

impl Default for Vocabulary {
    fn default() -> Self {
        let entries = [
            ("forward", DriveCommand::Forward),
            ("backward", DriveCommand::Backward),
            ("back", DriveCommand::Backward),
            ("left", DriveCommand::SpinLeft),
            ("right", DriveCommand::SpinRight),
            ("stop", DriveCommand::Stop),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        Vocabulary { entries }
    }
}

impl Vocabulary {
    pub fn empty() -> Self {
        Vocabulary { entries: BTreeMap::new() }
    }

    pub fn insert(&mut self, utterance: &str, cmd: DriveCommand) {
        self.entries.insert(normalize(utterance), cmd);
    }

    /// Parses `utterance=command` lines. Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self, VocabularyError> {
        let mut vocab = Vocabulary::empty();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |reason: String| VocabularyError { line: idx + 1, reason };
            let (utterance, command) =
                line.split_once('=').ok_or_else(|| err("expected `utterance=command`".into()))?;
            if utterance.trim().is_empty() {
                return Err(err("empty utterance".into()));
            }
            let cmd = command.parse().map_err(err)?;
            vocab.insert(utterance, cmd);
        }
        Ok(vocab)
    }

    pub fn lookup(&self, utterance: &str) -> Option<DriveCommand> {
        self.entries.get(&normalize(utterance)).copied()
    }

    /// Utterances in sorted order, for showing the user what they can say.
    pub fn utterances(&self) -> impl Iterator<Item = (&str, DriveCommand)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UtteranceMatch {
    Command(DriveCommand),
    NoMatch,
}

pub fn map_utterance(u: &str, vocab: &Vocabulary) -> UtteranceMatch {
    vocab.lookup(u).map_or(UtteranceMatch::NoMatch, UtteranceMatch::Command)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> DriveConfig {
        DriveConfig::default()
    }

    #[test]
    fn command_mapping() {
        assert_eq!(map_command(DriveCommand::Forward, &cfg()), PowerPair::new(75, 75));
        assert_eq!(map_command(DriveCommand::Backward, &cfg()), PowerPair::new(-75, -75));
        assert_eq!(map_command(DriveCommand::SpinLeft, &cfg()), PowerPair::new(-75, 75));
        assert_eq!(map_command(DriveCommand::SpinRight, &cfg()), PowerPair::new(75, -75));
        for p in [1, 50, 100] {
            let c = cfg().with_base_power(p);
            assert_eq!(map_command(DriveCommand::Stop, &c), PowerPair::STOP);
        }
    }

    #[test]
    fn tilt_examples() {
        assert_eq!(map_tilt(Tilt::new(0.0, 0.0), &cfg()), PowerPair::new(0, 0));
        assert_eq!(map_tilt(Tilt::new(45.0, 0.0), &cfg()), PowerPair::new(100, 100));
        // (27.5 - 10) / (45 - 10) = 0.5 on both axes: forward 50, turn 50.
        assert_eq!(map_tilt(Tilt::new(27.5, 27.5), &cfg()), PowerPair::new(100, 0));
        assert_eq!(map_tilt(Tilt::new(-27.5, 0.0), &cfg()), PowerPair::new(-50, -50));
        assert_eq!(map_tilt(Tilt::new(9.99, -9.99), &cfg()), PowerPair::STOP);
    }

    #[test]
    fn tilt_rounds_half_away_from_zero() {
        // 10 / 80 * 100 = 12.5 exactly in binary floating point.
        let c = DriveConfig { deadzone_deg: 0.0, full_scale_deg: 80.0, ..cfg() };
        assert_eq!(map_tilt(Tilt::new(10.0, 0.0), &c).left(), 13);
        assert_eq!(map_tilt(Tilt::new(-10.0, 0.0), &c).left(), -13);
    }

    #[test]
    fn tilt_sanitizes_non_finite() {
        assert_eq!(map_tilt(Tilt::new(f64::NAN, f64::INFINITY), &cfg()), PowerPair::STOP);
        assert_eq!(map_tilt(Tilt::new(400.0, 0.0), &cfg()), PowerPair::new(100, 100));
    }

    #[test]
    fn utterances() {
        let v = Vocabulary::default();
        assert_eq!(map_utterance("  Forward ", &v), UtteranceMatch::Command(DriveCommand::Forward));
        assert_eq!(map_utterance("back", &v), UtteranceMatch::Command(DriveCommand::Backward));
        assert_eq!(map_utterance("dance", &v), UtteranceMatch::NoMatch);
        assert_eq!(map_utterance("", &v), UtteranceMatch::NoMatch);
        let reachable: std::collections::HashSet<_> = v.utterances().map(|(_, c)| c).collect();
        assert_eq!(reachable.len(), 5);
    }

    #[test]
    fn vocabulary_file() {
        let v = Vocabulary::parse("# robot words\nGo = forward\n\nhalt=stop\nturn=left\n").unwrap();
        assert_eq!(v.lookup("go"), Some(DriveCommand::Forward));
        assert_eq!(v.lookup("HALT"), Some(DriveCommand::Stop));
        assert_eq!(v.lookup("turn"), Some(DriveCommand::SpinLeft));
        assert_eq!(v.lookup("forward"), None);
        let err = Vocabulary::parse("go=forward\nnonsense\n").unwrap_err();
        assert_eq!(err.line, 2);
        let err = Vocabulary::parse("go=dance").unwrap_err();
        assert_eq!(err.line, 1);
    }

    #[test]
    fn telegrams_for_motion_and_stop() {
        let [l, r] = to_telegrams(PowerPair::new(75, 75), &cfg());
        let (l, r) = (l.output_state().unwrap(), r.output_state().unwrap());
        assert_eq!((l.port, l.power), (Port::B, 75));
        assert_eq!((r.port, r.power), (Port::C, 75));
        assert_eq!(l.mode.bits(), 0x07);
        assert_eq!(l.regulation, Regulation::Speed);
        assert_eq!(l.run_state, RunState::Running);
        assert_eq!(l.tacho_limit, 0);

        for t in to_telegrams(PowerPair::STOP, &cfg()) {
            let s = t.output_state().unwrap();
            assert_eq!(s.power, 0);
            assert_eq!(s.mode, OutputMode::BRAKE);
            assert_eq!(s.run_state, RunState::Idle);
            assert!(!t.expects_reply());
        }

        let [l, r] = to_telegrams(PowerPair::new(-100, 100), &cfg());
        assert_eq!(l.output_state().unwrap().power, -100);
        assert_eq!(r.output_state().unwrap().power, 100);
    }

    #[test]
    fn config_validation() {
        assert!(cfg().validate().is_ok());
        assert!(cfg().with_base_power(0).validate().is_err());
        assert!(cfg().with_base_power(101).validate().is_err());
        let mut c = cfg();
        c.deadzone_deg = 45.0;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.full_scale_deg = 91.0;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.right_port = Port::B;
        assert!(c.validate().is_err());
    }

    proptest! {
        #[test]
        fn tilt_output_in_range(pitch in any::<f64>(), roll in any::<f64>()) {
            let p = map_tilt(Tilt::new(pitch, roll), &cfg());
            prop_assert!((-100..=100).contains(&p.left()));
            prop_assert!((-100..=100).contains(&p.right()));
        }

        #[test]
        fn tilt_is_odd(pitch in -90.0f64..90.0, roll in -90.0f64..90.0) {
            let (l, r) = tilt_mix(Tilt::new(pitch, roll), &cfg());
            let (nl, nr) = tilt_mix(Tilt::new(-pitch, -roll), &cfg());
            prop_assert_eq!(l, -nl);
            prop_assert_eq!(r, -nr);
            let p = map_tilt(Tilt::new(pitch, roll), &cfg());
            let n = map_tilt(Tilt::new(-pitch, -roll), &cfg());
            prop_assert!((i32::from(p.left()) + i32::from(n.left())).abs() <= 1);
            prop_assert!((i32::from(p.right()) + i32::from(n.right())).abs() <= 1);
        }

        #[test]
        fn tilt_monotone_in_pitch(a in -90.0f64..90.0, b in -90.0f64..90.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let pl = map_tilt(Tilt::new(lo, 0.0), &cfg()).left();
            let ph = map_tilt(Tilt::new(hi, 0.0), &cfg()).left();
            prop_assert!(pl <= ph);
        }

        #[test]
        fn deadzone_rests(pitch in -9.999f64..9.999, roll in -9.999f64..9.999) {
            prop_assert_eq!(map_tilt(Tilt::new(pitch, roll), &cfg()), PowerPair::STOP);
        }

        #[test]
        fn command_output_in_range(power in 1u8..=100, idx in 0usize..5) {
            let p = map_command(DriveCommand::ALL[idx], &cfg().with_base_power(power));
            prop_assert!((-100..=100).contains(&p.left()));
            prop_assert!((-100..=100).contains(&p.right()));
        }

        #[test]
        fn utterance_lookup_is_total(u in ".*") {
            let v = Vocabulary::default();
            let first = map_utterance(&u, &v);
            prop_assert_eq!(first, map_utterance(&u, &v));
        }
    }
}
