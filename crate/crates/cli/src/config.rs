//! Run configuration: a TOML file, optional `APS_SEED`, and flag overrides
//! (flags win over the environment, which wins over the file).

use std::path::{Path, PathBuf};

use aps_core::sim::{Design, DgpSpec, EstimatorKind, EstimatorSpec, Scenario};
use aps_core::{CsvSchema, EstimandSpec, OutcomeKind, RowFilter, Scale, Target};
use serde::Deserialize;

use crate::error::{CliError, CliResult};

pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_FOLDS: usize = 5;
pub const DEFAULT_REPLICATES: u64 = 200;
pub const DEFAULT_N: usize = 500;
pub const MIN_PERMUTATIONS: usize = aps_core::sim::permute::MIN_PERMUTATIONS;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Analyze,
    Simulate,
    Permute,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Analyze => "analyze",
            Command::Simulate => "simulate",
            Command::Permute => "permute",
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    folds: Option<usize>,
    output_dir: Option<PathBuf>,
    estimators: Option<Vec<String>>,
    target: Option<Target>,
    scale: Option<Scale>,
    screened_mars: Option<bool>,
    static_outcome: Option<String>,
    static_ps: Option<String>,
    data: Option<DataSection>,
    #[serde(default)]
    subgroups: Vec<SubgroupSection>,
    simulate: Option<SimulateSection>,
    permute: Option<PermuteSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DataSection {
    path: Option<PathBuf>,
    treatment: String,
    outcome: String,
    outcome_kind: OutcomeKind,
    #[serde(default)]
    covariates: Vec<String>,
    strata: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SubgroupSection {
    name: String,
    filter: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateSection {
    outcome: OutcomeKind,
    scenario: Option<Scenario>,
    scenarios: Option<Vec<Scenario>>,
    design: Option<Design>,
    designs: Option<Vec<Design>>,
    n: Option<usize>,
    replicates: Option<u64>,
    #[serde(default)]
    null_effect: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PermuteSection {
    b: Option<usize>,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub replicates: Option<u64>,
    pub permutations: Option<usize>,
    pub subgroup: Option<String>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct DataInput {
    pub path: PathBuf,
    pub schema: CsvSchema,
}

#[derive(Debug, Clone)]
pub struct Subgroup {
    pub name: String,
    pub filter: Option<RowFilter>,
}

#[derive(Debug, Clone)]
pub struct SimulationGrid {
    pub cells: Vec<DgpSpec>,
    pub replicates: u64,
}

/// A validated run description.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub command: Command,
    pub seed: u64,
    pub folds: usize,
    pub output_dir: PathBuf,
    pub estimand: EstimandSpec,
    pub roster: Vec<EstimatorSpec>,
    pub data: Option<DataInput>,
    /// Always starts with the full sample, named "overall".
    pub subgroups: Vec<Subgroup>,
    pub grid: Option<SimulationGrid>,
    pub permutations: Option<usize>,
}

fn parse_estimator(name: &str) -> CliResult<EstimatorKind> {
    EstimatorKind::parse(name).ok_or_else(|| {
        CliError::config(format!(
            "estimators: unknown estimator `{name}` (expected unadjusted, static, small-aps or large-aps)"
        ))
    })
}

fn covariate_index(names: &[String], field: &str, name: &str) -> CliResult<usize> {
    names
        .iter()
        .position(|c| c == name)
        .ok_or_else(|| CliError::config(format!("{field}: covariate `{name}` is not among the configured covariates")))
}

/// Reads `path` and applies the environment seed and flag overrides.
pub fn parse_config(command: Command, path: &Path, env_seed: Option<&str>, overrides: &Overrides) -> CliResult<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
    parse_config_str(command, &text, path.parent(), env_seed, overrides)
}

/// As [`parse_config`] for config text; relative data paths resolve against
/// `base_dir`.
pub fn parse_config_str(
    command: Command,
    text: &str,
    base_dir: Option<&Path>,
    env_seed: Option<&str>,
    overrides: &Overrides,
) -> CliResult<RunConfig> {
    let file: FileConfig = toml::from_str(text).map_err(|e| CliError::config(e.to_string()))?;

    let env_seed = env_seed
        .map(|s| s.trim().parse::<u64>().map_err(|_| CliError::config(format!("APS_SEED: `{s}` is not an unsigned integer"))))
        .transpose()?;
    let seed = overrides.seed.or(env_seed).or(file.seed).unwrap_or(DEFAULT_SEED);

    let folds = file.folds.unwrap_or(DEFAULT_FOLDS);
    if folds < 2 {
        return Err(CliError::config(format!("folds: must be at least 2, got {folds}")));
    }
    let output_dir = overrides
        .output_dir
        .clone()
        .or(file.output_dir)
        .unwrap_or_else(|| PathBuf::from("aps-output"));

    let kinds = match &file.estimators {
        Some(names) if names.is_empty() => return Err(CliError::config("estimators: list is empty")),
        Some(names) => names.iter().map(|n| parse_estimator(n)).collect::<CliResult<Vec<_>>>()?,
        None => vec![
            EstimatorKind::Unadjusted,
            EstimatorKind::Static,
            EstimatorKind::SmallAps,
            EstimatorKind::LargeAps,
        ],
    };
    let explicit_roster = file.estimators.is_some();

    let mut data = None;
    let mut grid = None;
    let (outcome_kind, covariates) = match command {
        Command::Analyze | Command::Permute => {
            let section = file
                .data
                .ok_or_else(|| CliError::config(format!("data: section is required for {}", command.name())))?;
            let raw = section
                .path
                .ok_or_else(|| CliError::config(format!("data.path: required for {}", command.name())))?;
            let path = match base_dir {
                Some(dir) if raw.is_relative() => dir.join(raw),
                _ => raw,
            };
            let schema = CsvSchema {
                treatment: section.treatment,
                outcome: section.outcome,
                outcome_kind: section.outcome_kind,
                covariates: section.covariates,
                strata: section.strata,
            };
            let out = (schema.outcome_kind, schema.covariates.clone());
            data = Some(DataInput { path, schema });
            out
        }
        Command::Simulate => {
            let s = file
                .simulate
                .ok_or_else(|| CliError::config("simulate: section is required for simulate"))?;
            let scenarios = match (s.scenario, s.scenarios) {
                (Some(_), Some(_)) => return Err(CliError::config("simulate: give either scenario or scenarios")),
                (Some(one), None) => vec![one],
                (None, Some(list)) if !list.is_empty() => list,
                _ => return Err(CliError::config("simulate.scenarios: at least one scenario is required")),
            };
            let designs = match (s.design, s.designs) {
                (Some(_), Some(_)) => return Err(CliError::config("simulate: give either design or designs")),
                (Some(one), None) => vec![one],
                (None, Some(list)) if !list.is_empty() => list,
                (None, Some(_)) => return Err(CliError::config("simulate.designs: list is empty")),
                (None, None) => vec![Design::Simple],
            };
            let n = s.n.unwrap_or(DEFAULT_N);
            if n < 2 * folds {
                return Err(CliError::config(format!("simulate.n: {n} units cannot fill {folds} folds per arm")));
            }
            let replicates = overrides.replicates.or(s.replicates).unwrap_or(DEFAULT_REPLICATES);
            if replicates == 0 {
                return Err(CliError::config("replicates: must be at least 1"));
            }
            let mut cells = Vec::new();
            for &scenario in &scenarios {
                for &design in &designs {
                    let mut spec = DgpSpec::new(s.outcome, scenario, n, design);
                    spec.null_effect = s.null_effect;
                    cells.push(spec);
                }
            }
            grid = Some(SimulationGrid { cells, replicates });
            let names = (1..=aps_core::sim::dgp::N_COVARIATES).map(|j| format!("W{j}")).collect();
            (s.outcome, names)
        }
    };

    let scale = file.scale.unwrap_or(match outcome_kind {
        OutcomeKind::Binary => Scale::Ratio,
        OutcomeKind::Continuous => Scale::Difference,
    });
    if outcome_kind == OutcomeKind::Continuous && scale == Scale::Ratio {
        return Err(CliError::config("scale: ratio requires a binary outcome"));
    }
    let estimand = EstimandSpec::new(file.target.unwrap_or(Target::Sample), scale);

    let static_outcome = match &file.static_outcome {
        Some(name) => covariate_index(&covariates, "static_outcome", name)?,
        None => 0,
    };
    let static_ps = file
        .static_ps
        .as_deref()
        .map(|name| covariate_index(&covariates, "static_ps", name))
        .transpose()?;
    let mut kinds = kinds;
    if kinds.contains(&EstimatorKind::Static) && covariates.is_empty() {
        if explicit_roster {
            return Err(CliError::config("estimators: static adjustment needs at least one covariate"));
        }
        kinds.retain(|&k| k != EstimatorKind::Static);
    }
    let screened_mars = file.screened_mars.unwrap_or(command != Command::Simulate);
    let roster = kinds
        .into_iter()
        .map(|k| {
            let mut e = EstimatorSpec::new(k, estimand);
            e.folds = folds;
            e.static_outcome = static_outcome;
            e.static_ps = static_ps;
            e.screened_mars = screened_mars;
            e
        })
        .collect();

    let mut subgroups = vec![Subgroup {
        name: "overall".into(),
        filter: None,
    }];
    if command != Command::Simulate {
        for s in &file.subgroups {
            let filter = RowFilter::parse(&s.filter).map_err(|e| CliError::config(format!("subgroups.{}: {e}", s.name)))?;
            subgroups.push(Subgroup {
                name: s.name.clone(),
                filter: Some(filter),
            });
        }
        if let Some(expr) = &overrides.subgroup {
            let filter = RowFilter::parse(expr).map_err(|e| CliError::config(format!("--subgroup: {e}")))?;
            subgroups.push(Subgroup {
                name: expr.clone(),
                filter: Some(filter),
            });
        }
    }

    let permutations = match command {
        Command::Permute => {
            let b = overrides
                .permutations
                .or(file.permute.and_then(|p| p.b))
                .ok_or_else(|| CliError::config("permute.b: number of permutations is required"))?;
            if b < MIN_PERMUTATIONS {
                return Err(CliError::config(format!("permute.b: at least {MIN_PERMUTATIONS} permutations required, got {b}")));
            }
            Some(b)
        }
        _ => None,
    };

    Ok(RunConfig {
        command,
        seed,
        folds,
        output_dir,
        estimand,
        roster,
        data,
        subgroups,
        grid,
        permutations,
    })
}
