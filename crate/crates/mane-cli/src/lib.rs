//! Batch front-end for the mane-core experiments: configuration, reports,
//! CSV export and the four subcommand pipelines.

pub mod commands;
pub mod config;
pub mod csv;
pub mod presets;
pub mod report;

pub use commands::{run_command, CliError};
pub use config::{Config, ConfigError};
