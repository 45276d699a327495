//! Report files. CSV and JSON writers are deterministic for a given report.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::commands::{AnalysisReport, PermutationRow, SimulationReport};
use crate::error::CliResult;

fn write_csv<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> CliResult<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub const ANALYSIS_COLUMNS: &[&str] = &[
    "subgroup",
    "n",
    "estimator",
    "effect",
    "ci_lower",
    "ci_upper",
    "variance",
    "rel_var",
    "pvalue",
    "selected_outcome",
    "selected_ps",
    "error",
];

pub const SIMULATION_COLUMNS: &[&str] = &[
    "outcome",
    "scenario",
    "design",
    "n",
    "null_effect",
    "estimator",
    "replicates",
    "failures",
    "coverage",
    "rejection_kind",
    "rejection_rate",
    "bias",
    "mse",
    "variance",
    "rel_eff",
    "savings",
];

pub const REPLICATE_COLUMNS: &[&str] = &[
    "outcome",
    "scenario",
    "design",
    "n",
    "replicate",
    "truth",
    "estimator",
    "estimate",
    "ci_lower",
    "ci_upper",
    "variance",
    "pvalue",
    "reject",
    "selected_outcome",
    "selected_ps",
    "error",
];

pub const PERMUTATION_COLUMNS: &[&str] = &[
    "subgroup",
    "n",
    "estimator",
    "permutations",
    "rejections",
    "failures",
    "rate",
    "interval_lower",
    "interval_upper",
    "within_interval",
];

pub fn write_analysis(dir: &Path, report: &AnalysisReport) -> CliResult<()> {
    fs::create_dir_all(dir)?;
    write_csv(&dir.join("metrics.csv"), &report.rows, ANALYSIS_COLUMNS)?;
    write_json(&dir.join("metrics.json"), &report.rows)?;
    write_json(&dir.join("ledger.json"), &report.ledgers)
}

pub fn write_simulation(dir: &Path, report: &SimulationReport) -> CliResult<()> {
    fs::create_dir_all(dir)?;
    let rows: Vec<_> = report.cells.iter().flat_map(|c| c.metrics.iter()).collect();
    write_csv(&dir.join("metrics.csv"), &rows, SIMULATION_COLUMNS)?;
    write_json(&dir.join("metrics.json"), &report.cells)?;
    write_csv(&dir.join("replicates.csv"), &report.replicates, REPLICATE_COLUMNS)
}

pub fn write_permutation(dir: &Path, rows: &[PermutationRow]) -> CliResult<()> {
    fs::create_dir_all(dir)?;
    write_csv(&dir.join("metrics.csv"), rows, PERMUTATION_COLUMNS)?;
    write_json(&dir.join("metrics.json"), rows)
}
