//! Scenario-driven front end: parse a TOML scenario, run an engine, write
//! CSV time series with a JSON metadata sidecar.

pub mod commands;
pub mod error;
pub mod output;
pub mod scenario;

pub use commands::{cmd_check, cmd_run, cmd_sweep, cmd_verify, csv_header, execute, RunOutput, SweepRow, VerifyReport};
pub use error::{exit, CliError, CliResult};
pub use scenario::{parse_scenario, parse_scenario_str, render, Scenario, ScenarioFile};

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "GTOT_OUTPUT_DIR";
