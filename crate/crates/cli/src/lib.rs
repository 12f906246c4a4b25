//! Command-line orchestration for the `ngc` binary: configuration,
//! artifact persistence and the four subcommands.

pub mod commands;
pub mod config;
pub mod error;
pub mod persist;

pub use error::CliError;
