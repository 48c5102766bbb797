//! Library half of the `rectikit` command-line tool.

pub mod commands;
pub mod config;
pub mod error;
pub mod svg;

pub use config::ExperimentConfig;
pub use error::CliError;
