use std::sync::Arc;

use parking_lot::Mutex;
use serde::Serialize;
use thiserror::Error;

use super::compile::compile;
use super::program::LogicProgram;
use crate::clock::{CancelToken, Clock};
use crate::drive::DriveConfig;
use crate::link::Link;
use crate::telegram::Telegram;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Idle,
    Running { step: usize },
    Finished,
    Cancelled { step: usize },
    Failed { step: usize, reason: String },
}

impl RunStatus {
    pub fn is_running(&self) -> bool {
        matches!(self, RunStatus::Running { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RunError {
    #[error("not connected to the robot")]
    NotConnected,
    #[error("a program is already running on this link")]
    AlreadyRunning,
}

/// Runs linear programs against one link. `cancel` may be called from any
/// thread while `run` blocks in another.
#[derive(Debug)]
pub struct Executor {
    link: Link,
    clock: Arc<dyn Clock>,
    token: CancelToken,
    active: Mutex<bool>,
}

impl Executor {
    pub fn new(link: Link, clock: Arc<dyn Clock>) -> Self {
        Executor { link, clock, token: CancelToken::new(), active: Mutex::new(false) }
    }

    pub fn link(&self) -> &Link {
        &self.link
    }

    /// Executes `prog`, calling `on_step(i)` as each step begins.
    pub fn run(
        &self,
        prog: &LogicProgram,
        cfg: &DriveConfig,
        mut on_step: impl FnMut(usize),
    ) -> Result<RunStatus, RunError> {
        if !self.link.state().is_connected() {
            return Err(RunError::NotConnected);
        }
        let _guard = self.link.try_begin_run().ok_or(RunError::AlreadyRunning)?;
        {
            let mut active = self.active.lock();
            self.token.reset();
            *active = true;
        }
        let status = self.execute(prog, cfg, &mut on_step);
        *self.active.lock() = false;
        Ok(status)
    }

    fn execute(&self, prog: &LogicProgram, cfg: &DriveConfig, on_step: &mut dyn FnMut(usize)) -> RunStatus {
        let mut current: Option<usize> = None;
        let index = |c: Option<usize>| c.unwrap_or(0);
        for action in compile(prog, cfg) {
            if self.token.is_cancelled() {
                return self.stop_with(RunStatus::Cancelled { step: index(current) });
            }
            if action.step.is_some() && action.step != current {
                current = action.step;
                on_step(index(current));
            }
            if let Err(e) = self.link.send_all(&action.telegrams) {
                return self.stop_with(RunStatus::Failed { step: index(current), reason: e.to_string() });
            }
            if !action.dwell.is_zero() && !self.clock.wait(action.dwell, &self.token) {
                return self.stop_with(RunStatus::Cancelled { step: index(current) });
            }
        }
        RunStatus::Finished
    }

    fn stop_with(&self, status: RunStatus) -> RunStatus {
        if let Err(e) = self.link.send(&Telegram::stop_all()) {
            tracing::warn!("could not stop motors: {e}");
        }
        status
    }

    /// Requests the running program to stop. No-op when nothing runs.
    pub fn cancel(&self) {
        if *self.active.lock() {
            self.token.cancel();
        }
    }

    pub fn is_running(&self) -> bool {
        *self.active.lock()
    }
}
