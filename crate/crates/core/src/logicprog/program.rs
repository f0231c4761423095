use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::drive::DriveCommand;
use crate::telegram::{TONE_MAX_HZ, TONE_MIN_HZ};

pub const FORMAT_VERSION: u32 = 1;
pub const MAX_STEPS: usize = 64;
pub const MAX_NAME_CHARS: usize = 64;
pub const MAX_STEP_MS: u32 = 60_000;
pub const DEFAULT_POWER: u8 = 75;
pub const PROGRAM_FILE_EXTENSION: &str = ".mynxt.json";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StepError {
    #[error("duration {0} ms outside 1..={MAX_STEP_MS}")]
    Duration(u32),
    #[error("power {0} outside 1..=100")]
    Power(u8),
    #[error("tone frequency {0} Hz outside {TONE_MIN_HZ}..={TONE_MAX_HZ}")]
    Frequency(u16),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Motion {
    Forward,
    Backward,
    SpinLeft,
    SpinRight,
}

impl Motion {
    pub fn drive_command(self) -> DriveCommand {
        match self {
            Motion::Forward => DriveCommand::Forward,
            Motion::Backward => DriveCommand::Backward,
            Motion::SpinLeft => DriveCommand::SpinLeft,
            Motion::SpinRight => DriveCommand::SpinRight,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StepAction {
    Drive { motion: Motion, power: u8 },
    Pause,
    Tone { frequency_hz: u16 },
}

/// One block of a linear program. Always valid once constructed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "StepDoc", into = "StepDoc")]
pub struct LogicStep {
    action: StepAction,
    duration_ms: u32,
}

fn check_duration(ms: u32) -> Result<(), StepError> {
    if (1..=MAX_STEP_MS).contains(&ms) {
        Ok(())
    } else {
        Err(StepError::Duration(ms))
    }
}

impl LogicStep {
    pub fn drive(motion: Motion, duration_ms: u32, power: u8) -> Result<Self, StepError> {
        check_duration(duration_ms)?;
        if !(1..=100).contains(&power) {
            return Err(StepError::Power(power));
        }
        Ok(LogicStep { action: StepAction::Drive { motion, power }, duration_ms })
    }

    pub fn forward(duration_ms: u32, power: u8) -> Result<Self, StepError> {
        Self::drive(Motion::Forward, duration_ms, power)
    }

    pub fn pause(duration_ms: u32) -> Result<Self, StepError> {
        check_duration(duration_ms)?;
        Ok(LogicStep { action: StepAction::Pause, duration_ms })
    }

    pub fn tone(frequency_hz: u16, duration_ms: u32) -> Result<Self, StepError> {
        check_duration(duration_ms)?;
        if !(TONE_MIN_HZ..=TONE_MAX_HZ).contains(&frequency_hz) {
            return Err(StepError::Frequency(frequency_hz));
        }
        Ok(LogicStep { action: StepAction::Tone { frequency_hz }, duration_ms })
    }

    pub fn action(&self) -> StepAction {
        self.action
    }

    pub fn duration_ms(&self) -> u32 {
        self.duration_ms
    }

    pub fn op_name(&self) -> &'static str {
        match self.action {
            StepAction::Drive { motion: Motion::Forward, .. } => "forward",
            StepAction::Drive { motion: Motion::Backward, .. } => "backward",
            StepAction::Drive { motion: Motion::SpinLeft, .. } => "spin_left",
            StepAction::Drive { motion: Motion::SpinRight, .. } => "spin_right",
            StepAction::Pause => "pause",
            StepAction::Tone { .. } => "tone",
        }
    }
}

impl fmt::Display for LogicStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.action {
            StepAction::Drive { power, .. } => {
                write!(f, "{} {} ms @{}", self.op_name(), self.duration_ms, power)
            }
            StepAction::Pause => write!(f, "pause {} ms", self.duration_ms),
            StepAction::Tone { frequency_hz } => {
                write!(f, "tone {} Hz {} ms", frequency_hz, self.duration_ms)
            }
        }
    }
}

fn default_power() -> u8 {
    DEFAULT_POWER
}

/// On-disk shape of a step. Field order here is the canonical key order.
#[derive(Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
enum StepDoc {
    Forward {
        ms: u32,
        #[serde(default = "default_power")]
        power: u8,
    },
    Backward {
        ms: u32,
        #[serde(default = "default_power")]
        power: u8,
    },
    SpinLeft {
        ms: u32,
        #[serde(default = "default_power")]
        power: u8,
    },
    SpinRight {
        ms: u32,
        #[serde(default = "default_power")]
        power: u8,
    },
    Pause {
        ms: u32,
    },
    Tone {
        ms: u32,
        hz: u16,
    },
}

impl TryFrom<StepDoc> for LogicStep {
    type Error = StepError;

    fn try_from(doc: StepDoc) -> Result<Self, StepError> {
        match doc {
            StepDoc::Forward { ms, power } => LogicStep::drive(Motion::Forward, ms, power),
            StepDoc::Backward { ms, power } => LogicStep::drive(Motion::Backward, ms, power),
            StepDoc::SpinLeft { ms, power } => LogicStep::drive(Motion::SpinLeft, ms, power),
            StepDoc::SpinRight { ms, power } => LogicStep::drive(Motion::SpinRight, ms, power),
            StepDoc::Pause { ms } => LogicStep::pause(ms),
            StepDoc::Tone { ms, hz } => LogicStep::tone(hz, ms),
        }
    }
}

impl From<LogicStep> for StepDoc {
    fn from(step: LogicStep) -> StepDoc {
        let ms = step.duration_ms;
        match step.action {
            StepAction::Drive { motion, power } => match motion {
                Motion::Forward => StepDoc::Forward { ms, power },
                Motion::Backward => StepDoc::Backward { ms, power },
                Motion::SpinLeft => StepDoc::SpinLeft { ms, power },
                Motion::SpinRight => StepDoc::SpinRight { ms, power },
            },
            StepAction::Pause => StepDoc::Pause { ms },
            StepAction::Tone { frequency_hz } => StepDoc::Tone { ms, hz: frequency_hz },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProgramError {
    #[error("program already has {MAX_STEPS} steps")]
    ProgramFull,
    #[error("step index {index} out of range for {len} steps")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("program name longer than {MAX_NAME_CHARS} characters")]
    NameTooLong,
    #[error("unsupported format version {0}; expected {FORMAT_VERSION}")]
    Version(u32),
}

/// The Logic Creator document: a named, ordered list of at most 64 steps.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "ProgramDoc", into = "ProgramDoc")]
pub struct LogicProgram {
    name: String,
    steps: Vec<LogicStep>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProgramDoc {
    version: u32,
    name: String,
    steps: Vec<LogicStep>,
}

impl TryFrom<ProgramDoc> for LogicProgram {
    type Error = ProgramError;

    fn try_from(doc: ProgramDoc) -> Result<Self, ProgramError> {
        if doc.version != FORMAT_VERSION {
            return Err(ProgramError::Version(doc.version));
        }
        if doc.steps.len() > MAX_STEPS {
            return Err(ProgramError::ProgramFull);
        }
        let mut prog = LogicProgram::new(doc.name)?;
        prog.steps = doc.steps;
        Ok(prog)
    }
}

impl From<LogicProgram> for ProgramDoc {
    fn from(p: LogicProgram) -> ProgramDoc {
        ProgramDoc { version: FORMAT_VERSION, name: p.name, steps: p.steps }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}, column {column}: {reason}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub reason: String,
}

impl From<serde_json::Error> for ParseError {
    fn from(e: serde_json::Error) -> Self {
        let full = e.to_string();
        let reason = match full.rfind(" at line ") {
            Some(i) => full[..i].to_string(),
            None => full,
        };
        ParseError { line: e.line(), column: e.column(), reason }
    }
}

impl LogicProgram {
    pub fn new(name: impl Into<String>) -> Result<Self, ProgramError> {
        let name = name.into();
        if name.chars().count() > MAX_NAME_CHARS {
            return Err(ProgramError::NameTooLong);
        }
        Ok(LogicProgram { name, steps: Vec::new() })
    }

    pub fn from_steps(
        name: impl Into<String>,
        steps: impl IntoIterator<Item = LogicStep>,
    ) -> Result<Self, ProgramError> {
        steps.into_iter().try_fold(Self::new(name)?, |p, s| p.append(s))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn steps(&self) -> &[LogicStep] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn append(&self, step: LogicStep) -> Result<Self, ProgramError> {
        if self.steps.len() >= MAX_STEPS {
            return Err(ProgramError::ProgramFull);
        }
        let mut next = self.clone();
        next.steps.push(step);
        Ok(next)
    }

    pub fn remove(&self, index: usize) -> Result<Self, ProgramError> {
        if index >= self.steps.len() {
            return Err(ProgramError::IndexOutOfRange { index, len: self.steps.len() });
        }
        let mut next = self.clone();
        next.steps.remove(index);
        Ok(next)
    }

    pub fn clear(&self) -> Self {
        LogicProgram { name: self.name.clone(), steps: Vec::new() }
    }

    /// Canonical JSON: fixed key order, no insignificant whitespace.
    pub fn serialize(&self) -> String {
        serde_json::to_string(self).expect("program serialization is infallible")
    }

    pub fn parse(text: &str) -> Result<Self, ParseError> {
        Ok(serde_json::from_str(text)?)
    }

    /// Sum of all step durations.
    pub fn total_duration_ms(&self) -> u64 {
        self.steps.iter().map(|s| u64::from(s.duration_ms)).sum()
    }
}
