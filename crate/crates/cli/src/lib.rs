//! Library side of the `quadhmm` command: run configuration, the scenario
//! file formats and the four subcommands.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;

pub use error::{CliError, CliResult};
