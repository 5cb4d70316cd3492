//! Command-line front end: configuration, file formats and the `simulate`,
//! `fit`, `summarize` and `fpca` commands.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;

pub use commands::{cmd_fit, cmd_fpca, cmd_simulate, cmd_summarize, Options};
pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
