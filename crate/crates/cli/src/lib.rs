//! Library side of the `spsgf` command: configuration, artifacts, runs,
//! sweeps and reports.

pub mod artifacts;
pub mod config;
pub mod error;
pub mod report;
pub mod run;

pub use config::{CheckKind, Overrides, Preset, SimConfig, Violation};
pub use error::{CliError, Result};
