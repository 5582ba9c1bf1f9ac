//! Command implementations behind the `rstt` binary. Each command writes
//! its console report to the given sink and returns a summary.

pub mod alloc;
pub mod commands;
pub mod config;
pub mod error;
pub mod frames;

pub use config::RunConfig;
pub use error::{CliError, CliResult};
