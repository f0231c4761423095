use std::time::Duration;

use super::program::{LogicProgram, StepAction};
use crate::drive::{self, DriveConfig};
use crate::telegram::{Command, PlayTone, Telegram};

/// Telegrams to emit, then how long to hold before the next action.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimedAction {
    /// Program step this action belongs to; `None` for the terminal stop.
    pub step: Option<usize>,
    pub telegrams: Vec<Telegram>,
    pub dwell: Duration,
}

/// Lowers a program to timed telegram batches.
///
/// Motion steps drive, dwell, then brake both wheels so every step starts
/// from rest. The list always ends with a stop-all.
pub fn compile(prog: &LogicProgram, cfg: &DriveConfig) -> Vec<TimedAction> {
    let mut out = Vec::with_capacity(prog.len() * 2 + 1);
    for (i, step) in prog.steps().iter().enumerate() {
        let dwell = Duration::from_millis(step.duration_ms().into());
        match step.action() {
            StepAction::Drive { motion, power } => {
                let pair = drive::map_command(motion.drive_command(), &cfg.with_base_power(power));
                out.push(TimedAction {
                    step: Some(i),
                    telegrams: drive::to_telegrams(pair, cfg).to_vec(),
                    dwell,
                });
                out.push(TimedAction {
                    step: Some(i),
                    telegrams: drive::brake_telegrams(cfg).to_vec(),
                    dwell: Duration::ZERO,
                });
            }
            StepAction::Pause => {
                out.push(TimedAction { step: Some(i), telegrams: Vec::new(), dwell });
            }
            StepAction::Tone { frequency_hz } => {
                let tone = PlayTone {
                    frequency_hz,
                    duration_ms: u16::try_from(step.duration_ms()).unwrap_or(u16::MAX),
                };
                out.push(TimedAction {
                    step: Some(i),
                    telegrams: vec![Telegram::no_reply(Command::PlayTone(tone))],
                    dwell,
                });
            }
        }
    }
    out.push(TimedAction { step: None, telegrams: vec![Telegram::stop_all()], dwell: Duration::ZERO });
    out
}

/// Every telegram the actions emit, in order.
pub fn transcript(actions: &[TimedAction]) -> Vec<Telegram> {
    actions.iter().flat_map(|a| a.telegrams.iter().cloned()).collect()
}

pub fn total_dwell(actions: &[TimedAction]) -> Duration {
    actions.iter().map(|a| a.dwell).sum()
}
