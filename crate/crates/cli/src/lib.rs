//! Experiment runner for [`elmap`]: config files, demonstration loading and
//! result export.

pub mod config;
mod error;
pub mod io;
pub mod output;
pub mod run;

pub use config::{ExperimentConfig, Mode};
pub use error::{CliError, CliResult};
pub use run::{run, validate, Inputs, Overrides};
