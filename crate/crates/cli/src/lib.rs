//! Batch front end: config parsing, experiment runs and CSV output.

pub mod commands;
pub mod config;

pub use commands::{cmd_alloc, cmd_diag, cmd_run, load_config, CliError};
pub use config::{ConfigError, RunConfig};
