//! Configuration, orchestration and reporting for the `smoothtail` binary.

pub mod config;
pub mod error;
pub mod report;
pub mod run;

pub use config::{parse_config, parse_config_str, RunConfig};
pub use error::CliError;
pub use report::RunReport;
pub use run::{execute, run_config, Command, Outcome, Overrides};
