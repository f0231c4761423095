//! Pieces of the `nxtbridge` command line that are worth testing on their own.

pub mod teleop;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 2;
    pub const CONNECT: i32 = 3;
    pub const RUNTIME: i32 = 4;
    pub const INTERRUPTED: i32 = 130;
}
