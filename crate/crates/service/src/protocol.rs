//! JSON messages exchanged with UI clients, one object per WebSocket frame.

use nxtbridge_core::link::LinkState;
use nxtbridge_core::logicprog::RunStatus;
use nxtbridge_core::simbrick::SimPose;
use serde::{Deserialize, Serialize};

use crate::guidance::Screen;

pub const ERR_SCHEMA: &str = "schema";
pub const ERR_NOT_CONTROLLER: &str = "not-controller";
pub const ERR_NOT_CONNECTED: &str = "not-connected";
pub const ERR_ALREADY_CONNECTED: &str = "already-connected";
pub const ERR_ALREADY_RUNNING: &str = "already-running";
pub const ERR_PROGRAM_RUNNING: &str = "program-running";
pub const ERR_NO_PROGRAM: &str = "no-program";
pub const ERR_NO_TARGET: &str = "no-target";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Controller,
    Observer,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "type", deny_unknown_fields)]
pub enum ClientMsg {
    #[serde(rename = "hello")]
    Hello { role: Role },
    #[serde(rename = "screen")]
    Screen { screen: Screen },
    #[serde(rename = "connect")]
    Connect {
        #[serde(default)]
        target: Option<String>,
    },
    #[serde(rename = "disconnect")]
    Disconnect {},
    #[serde(rename = "drive")]
    Drive { cmd: String },
    #[serde(rename = "tilt")]
    Tilt { pitch: f64, roll: f64 },
    #[serde(rename = "speech")]
    Speech { utterance: String },
    #[serde(rename = "program.load")]
    ProgramLoad { program: serde_json::Value },
    #[serde(rename = "program.run")]
    ProgramRun {},
    #[serde(rename = "program.cancel")]
    ProgramCancel {},
}

impl ClientMsg {
    pub fn parse(text: &str) -> Result<ClientMsg, String> {
        serde_json::from_str(text).map_err(|e| e.to_string())
    }

    /// Only `hello` may come from a client that does not hold control.
    pub fn needs_control(&self) -> bool {
        !matches!(self, ClientMsg::Hello { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProgramSummary {
    pub name: String,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type")]
pub enum ServerMsg {
    #[serde(rename = "state")]
    State {
        link: LinkState,
        screen: Screen,
        run: RunStatus,
        role: Role,
        #[serde(skip_serializing_if = "Option::is_none")]
        program: Option<ProgramSummary>,
    },
    #[serde(rename = "guidance")]
    Guidance { text: String },
    #[serde(rename = "warning")]
    Warning { code: String, text: String },
    #[serde(rename = "error")]
    Error { code: String, reason: String },
    #[serde(rename = "progress")]
    Progress { step: usize },
    #[serde(rename = "telemetry")]
    Telemetry {
        #[serde(skip_serializing_if = "Option::is_none")]
        battery_mv: Option<u16>,
        #[serde(skip_serializing_if = "Option::is_none")]
        pose: Option<SimPose>,
    },
    #[serde(rename = "speech.nomatch")]
    SpeechNoMatch { utterance: String, commands: Vec<String> },
}

impl ServerMsg {
    pub fn error(code: &str, reason: impl Into<String>) -> ServerMsg {
        ServerMsg::Error { code: code.to_string(), reason: reason.into() }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ServerMsg::State { .. } => "state",
            ServerMsg::Guidance { .. } => "guidance",
            ServerMsg::Warning { .. } => "warning",
            ServerMsg::Error { .. } => "error",
            ServerMsg::Progress { .. } => "progress",
            ServerMsg::Telemetry { .. } => "telemetry",
            ServerMsg::SpeechNoMatch { .. } => "speech.nomatch",
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages always serialize")
    }
}
