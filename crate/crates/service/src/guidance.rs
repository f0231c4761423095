//! The instruction label shown under every screen.

use std::fmt;
use std::str::FromStr;

use nxtbridge_core::link::LinkState;
use nxtbridge_core::logicprog::RunStatus;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Screen {
    #[default]
    Home,
    Speech,
    Tilt,
    Arrows,
    LogicCreator,
}

impl Screen {
    pub const ALL: [Screen; 5] =
        [Screen::Home, Screen::Speech, Screen::Tilt, Screen::Arrows, Screen::LogicCreator];

    pub fn name(self) -> &'static str {
        match self {
            Screen::Home => "home",
            Screen::Speech => "speech",
            Screen::Tilt => "tilt",
            Screen::Arrows => "arrows",
            Screen::LogicCreator => "logic_creator",
        }
    }

    pub fn is_control(self) -> bool {
        self != Screen::Home
    }
}

impl fmt::Display for Screen {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Screen {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Screen::ALL.into_iter().find(|sc| sc.name() == s).ok_or_else(|| format!("unknown screen `{s}`"))
    }
}

/// What the label should say, independent of language.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GuidanceKey {
    ChooseMode,
    PressConnect,
    Connecting,
    ConnectFailed,
    SpeechReady,
    TiltReady,
    ArrowsReady,
    /// Manual driving is locked while a program runs.
    ProgramBusy,
    AddSteps,
    RunningStep(usize),
    RunFinished,
    RunCancelled(usize),
    RunFailed(usize),
}

pub fn guidance_key(screen: Screen, link: &LinkState, run: &RunStatus) -> GuidanceKey {
    use GuidanceKey::*;
    if !screen.is_control() {
        return ChooseMode;
    }
    match link {
        LinkState::Disconnected => return PressConnect,
        LinkState::Connecting => return Connecting,
        LinkState::Faulted(_) => return ConnectFailed,
        LinkState::Connected => {}
    }
    match (screen, run) {
        (Screen::LogicCreator, RunStatus::Idle) => AddSteps,
        (Screen::LogicCreator, RunStatus::Running { step }) => RunningStep(*step),
        (Screen::LogicCreator, RunStatus::Finished) => RunFinished,
        (Screen::LogicCreator, RunStatus::Cancelled { step }) => RunCancelled(*step),
        (Screen::LogicCreator, RunStatus::Failed { step, .. }) => RunFailed(*step),
        (_, RunStatus::Running { .. }) => ProgramBusy,
        (Screen::Speech, _) => SpeechReady,
        (Screen::Tilt, _) => TiltReady,
        (_, _) => ArrowsReady,
    }
}

/// Renders guidance keys in one language.
pub trait Catalog: Send + Sync {
    fn text(&self, key: GuidanceKey) -> String;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct English;

impl Catalog for English {
    fn text(&self, key: GuidanceKey) -> String {
        use GuidanceKey::*;
        // Step numbers are shown counting from one.
        match key {
            ChooseMode => "Choose how you want to control the robot".into(),
            PressConnect => "Press CONNECT to connect to the robot".into(),
            Connecting => "Connecting to the robot...".into(),
            ConnectFailed => "Could not reach the robot. Press CONNECT to try again".into(),
            SpeechReady => "Press the Microphone to Give Commands".into(),
            TiltReady => "Tilt the device to drive the robot".into(),
            ArrowsReady => "Press and hold an arrow to drive the robot".into(),
            ProgramBusy => "A program is running. Open the Logic Creator to stop it".into(),
            AddSteps => "Add steps, then press RUN".into(),
            RunningStep(i) => format!("Running step {}", i + 1),
            RunFinished => "Program finished. Press RUN to run it again".into(),
            RunCancelled(i) => format!("Program stopped at step {}. Press RUN to start again", i + 1),
            RunFailed(i) => format!("Program failed at step {}. Press RUN to try again", i + 1),
        }
    }
}

pub fn guidance_with(catalog: &dyn Catalog, screen: Screen, link: &LinkState, run: &RunStatus) -> String {
    catalog.text(guidance_key(screen, link, run))
}

/// English guidance for the given situation. Total and deterministic.
pub fn guidance_for(screen: Screen, link: &LinkState, run: &RunStatus) -> String {
    guidance_with(&English, screen, link, run)
}
