//! Library side of the `icmt` binary: resolved run configs and the command
//! implementations, usable without spawning a process.

pub mod commands;
pub mod config;

pub use commands::{exit_code, load_config, run};
pub use config::RunConfig;
