//! Run orchestration for the Zeno simulator: configuration, sweeps,
//! persistence and figure data.

#![allow(clippy::needless_range_loop)]

pub mod config;
pub mod figures;
pub mod oracle_cmd;
pub mod output;
pub mod runner;

pub use config::{ConfigError, RunConfig};

/// Exit status for a finished command.
pub const EXIT_OK: i32 = 0;
/// At least one sweep point or the command itself failed at run time.
pub const EXIT_RUNTIME: i32 = 1;
/// The configuration could not be read or did not validate.
pub const EXIT_CONFIG: i32 = 2;
