//! Experiment front-end for `mfrw-core`: TOML configs, single runs,
//! noise-grid sweeps, SVG reports and dataset dumps.

pub mod config;
pub mod error;
pub mod gendata;
pub mod report;
pub mod run;
pub mod sweep;

pub use config::{load_config, parse_config, ExperimentConfig};
pub use error::{CliError, Result};
