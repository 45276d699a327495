//! Configuration, commands and report writers behind the `aps` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use config::{parse_config, parse_config_str, Command, Overrides, RunConfig};
pub use error::{CliError, CliResult};

/// Runs a parsed configuration and writes its reports.
pub fn execute(cfg: &RunConfig) -> CliResult<()> {
    match cfg.command {
        Command::Analyze => {
            let report = commands::analyze(cfg)?;
            output::write_analysis(&cfg.output_dir, &report)?;
            let failed: Vec<String> = report
                .rows
                .iter()
                .filter_map(|r| r.error.as_ref().map(|e| format!("{}/{}: {e}", r.subgroup, r.estimator)))
                .collect();
            if !failed.is_empty() {
                return Err(CliError::Numeric(failed.join("; ")));
            }
        }
        Command::Simulate => {
            let report = commands::simulate(cfg)?;
            output::write_simulation(&cfg.output_dir, &report)?;
        }
        Command::Permute => {
            let rows = commands::permute(cfg)?;
            output::write_permutation(&cfg.output_dir, &rows)?;
        }
    }
    Ok(())
}
