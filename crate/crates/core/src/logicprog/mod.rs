//! Linear programs built in the Logic Creator: the document model, its JSON
//! file format, lowering to timed telegrams, and the run/cancel executor.

mod compile;
mod executor;
mod program;

pub use compile::{compile, total_dwell, transcript, TimedAction};
pub use executor::{Executor, RunError, RunStatus};
pub use program::{
    LogicProgram, LogicStep, Motion, ParseError, ProgramError, StepAction, StepError, DEFAULT_POWER,
    FORMAT_VERSION, MAX_NAME_CHARS, MAX_STEPS, MAX_STEP_MS, PROGRAM_FILE_EXTENSION,
};
