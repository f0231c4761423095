//! Arrow-key driving. Terminals that report key releases stop the robot on
//! release; the rest stop once auto-repeat for the held key dries up.

use std::time::{Duration, Instant};

use crossterm::event::{KeyCode, KeyEvent, KeyEventKind, KeyModifiers};
use nxtbridge_core::drive::{self, DriveCommand, DriveConfig};
use nxtbridge_core::link::{Link, LinkError};

/// How long a first press counts as held without repeats; covers the usual
/// auto-repeat start delay.
pub const INITIAL_HOLD: Duration = Duration::from_millis(600);
/// Gap between auto-repeats after which the key counts as released.
pub const REPEAT_HOLD: Duration = Duration::from_millis(90);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeyInput {
    Press(DriveCommand),
    Repeat(DriveCommand),
    Release(DriveCommand),
    Quit,
}

pub fn key_input(ev: &KeyEvent) -> Option<KeyInput> {
    if ev.code == KeyCode::Esc
        || ev.code == KeyCode::Char('q')
        || (ev.code == KeyCode::Char('c') && ev.modifiers.contains(KeyModifiers::CONTROL))
    {
        return Some(KeyInput::Quit);
    }
    let cmd = match ev.code {
        KeyCode::Up | KeyCode::Char('w') => DriveCommand::Forward,
        KeyCode::Down | KeyCode::Char('s') => DriveCommand::Backward,
        KeyCode::Left | KeyCode::Char('a') => DriveCommand::SpinLeft,
        KeyCode::Right | KeyCode::Char('d') => DriveCommand::SpinRight,
        KeyCode::Char(' ') => DriveCommand::Stop,
        _ => return None,
    };
    Some(match ev.kind {
        KeyEventKind::Press => KeyInput::Press(cmd),
        KeyEventKind::Repeat => KeyInput::Repeat(cmd),
        KeyEventKind::Release => KeyInput::Release(cmd),
    })
}

#[derive(Debug, Clone)]
pub struct Teleop {
    held: Option<DriveCommand>,
    expires: Option<Instant>,
    repeats: bool,
    release_events: bool,
}

impl Teleop {
    pub fn new(release_events: bool) -> Self {
        Teleop { held: None, expires: None, repeats: false, release_events }
    }

    pub fn held(&self) -> Option<DriveCommand> {
        self.held
    }

    /// Applies a key event; returns the command to send, if any.
    pub fn key(&mut self, input: KeyInput, now: Instant) -> Option<DriveCommand> {
        match input {
            KeyInput::Press(DriveCommand::Stop) | KeyInput::Quit => self.release(),
            KeyInput::Press(cmd) | KeyInput::Repeat(cmd) => {
                let repeat = self.held == Some(cmd);
                self.repeats = repeat;
                self.held = Some(cmd);
                if !self.release_events {
                    let hold = if repeat { REPEAT_HOLD } else { INITIAL_HOLD };
                    self.expires = Some(now + hold);
                }
                (!repeat).then_some(cmd)
            }
            KeyInput::Release(cmd) if self.held == Some(cmd) => self.release(),
            KeyInput::Release(_) => None,
        }
    }

    fn release(&mut self) -> Option<DriveCommand> {
        self.expires = None;
        self.held.take().map(|_| DriveCommand::Stop)
    }

    /// Stop once the held key has gone quiet.
    pub fn tick(&mut self, now: Instant) -> Option<DriveCommand> {
        match self.expires {
            Some(t) if now >= t => self.release(),
            _ => None,
        }
    }

    /// How long the input loop may block before the next `tick`.
    pub fn poll_timeout(&self, now: Instant) -> Duration {
        match self.expires {
            Some(t) => t.saturating_duration_since(now),
            None => Duration::from_millis(250),
        }
    }
}

pub fn send(link: &Link, cmd: DriveCommand, cfg: &DriveConfig) -> Result<(), LinkError> {
    link.send_all(&drive::to_telegrams(drive::map_command(cmd, cfg), cfg))
}
