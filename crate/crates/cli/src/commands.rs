//! The three subcommands. Each returns its report; writing is separate.

use aps_core::sim::metrics::SelectionFrequency;
use aps_core::sim::{run_replicates, summarize_metrics, treatment_blind_type1, EstimatorKind, EstimatorSpec, ReplicateReport};
use aps_core::{load_csv, CvRiskLedger, LearnerKind, LearnerSpec, TrialDataset};
use serde::Serialize;

use crate::config::{RunConfig, Subgroup};
use crate::error::{CliError, CliResult};

/// One row of the real-data results table.
#[derive(Debug, Clone, Serialize)]
pub struct AnalysisRow {
    pub subgroup: String,
    pub n: usize,
    pub estimator: String,
    pub effect: Option<f64>,
    pub ci_lower: Option<f64>,
    pub ci_upper: Option<f64>,
    pub variance: Option<f64>,
    /// Variance relative to the unadjusted estimator in the same subgroup.
    pub rel_var: Option<f64>,
    pub pvalue: Option<f64>,
    pub selected_outcome: Option<String>,
    pub selected_ps: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LedgerEntry {
    pub subgroup: String,
    pub estimator: String,
    pub ledger: CvRiskLedger,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalysisReport {
    pub rows: Vec<AnalysisRow>,
    pub ledgers: Vec<LedgerEntry>,
}

fn fixed_labels(spec: &EstimatorSpec, names: &[String]) -> (String, String) {
    let unadj = LearnerKind::Unadjusted;
    let (o, g) = match spec.kind {
        EstimatorKind::Static => (
            LearnerKind::UnivariateGlm(spec.static_outcome),
            spec.static_ps.map_or(unadj, LearnerKind::UnivariateGlm),
        ),
        _ => (unadj, unadj),
    };
    (LearnerSpec::outcome(o).label(names), LearnerSpec::propensity(g).label(names))
}

fn load_subgroups(cfg: &RunConfig) -> CliResult<Vec<(String, TrialDataset)>> {
    let input = cfg.data.as_ref().ok_or_else(|| CliError::config("data: section is required"))?;
    let data = load_csv(&input.path, &input.schema)?;
    cfg.subgroups
        .iter()
        .map(|Subgroup { name, filter }| {
            let d = match filter {
                Some(f) => f.apply(&data)?,
                None => data.clone(),
            };
            Ok((name.clone(), d))
        })
        .collect()
}

pub fn analyze(cfg: &RunConfig) -> CliResult<AnalysisReport> {
    let mut rows = Vec::new();
    let mut ledgers = Vec::new();
    for (name, data) in load_subgroups(cfg)? {
        let reference = EstimatorSpec::new(EstimatorKind::Unadjusted, cfg.estimand);
        let unadj_var = reference.run(&data, cfg.seed).ok().map(|(f, _)| f.variance);
        for spec in &cfg.roster {
            let mut row = AnalysisRow {
                subgroup: name.clone(),
                n: data.n(),
                estimator: spec.name().to_string(),
                effect: None,
                ci_lower: None,
                ci_upper: None,
                variance: None,
                rel_var: None,
                pvalue: None,
                selected_outcome: None,
                selected_ps: None,
                error: None,
            };
            match spec.run(&data, cfg.seed) {
                Ok((fit, ledger)) => {
                    row.effect = Some(fit.effect);
                    row.ci_lower = Some(fit.ci.0);
                    row.ci_upper = Some(fit.ci.1);
                    row.variance = Some(fit.variance);
                    row.rel_var = unadj_var.filter(|&v| v > 0.0).map(|v| fit.variance / v);
                    row.pvalue = Some(fit.pvalue);
                    let (o, g) = match &ledger {
                        Some(l) => (l.selected_outcome_label().to_string(), l.selected_ps_label().to_string()),
                        None => fixed_labels(spec, data.covariate_names()),
                    };
                    row.selected_outcome = Some(o);
                    row.selected_ps = Some(g);
                    if let Some(ledger) = ledger {
                        ledgers.push(LedgerEntry {
                            subgroup: name.clone(),
                            estimator: spec.name().to_string(),
                            ledger,
                        });
                    }
                }
                Err(e) => {
                    log::error!("{} failed on subgroup {name}: {e}", spec.name());
                    row.error = Some(e.to_string());
                }
            }
            rows.push(row);
        }
    }
    Ok(AnalysisReport { rows, ledgers })
}

/// One (setting, estimator) cell of the simulation results.
#[derive(Debug, Clone, Serialize)]
pub struct SimulationRow {
    pub outcome: String,
    pub scenario: String,
    pub design: String,
    pub n: usize,
    pub null_effect: bool,
    pub estimator: String,
    pub replicates: usize,
    pub failures: usize,
    pub coverage: f64,
    /// `power` when an effect is present, `type1` under the null.
    pub rejection_kind: &'static str,
    pub rejection_rate: f64,
    pub bias: f64,
    pub mse: f64,
    pub variance: Option<f64>,
    pub rel_eff: Option<f64>,
    pub savings: Option<f64>,
}

/// One estimator result of one replicate.
#[derive(Debug, Clone, Serialize)]
pub struct ReplicateRow {
    pub outcome: String,
    pub scenario: String,
    pub design: String,
    pub n: usize,
    pub replicate: u64,
    pub truth: Option<f64>,
    pub estimator: String,
    pub estimate: Option<f64>,
    pub ci_lower: Option<f64>,
    pub ci_upper: Option<f64>,
    pub variance: Option<f64>,
    pub pvalue: Option<f64>,
    pub reject: bool,
    pub selected_outcome: Option<String>,
    pub selected_ps: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationCell {
    pub outcome: String,
    pub scenario: String,
    pub design: String,
    pub n: usize,
    pub null_effect: bool,
    pub replicates: u64,
    pub metrics: Vec<SimulationRow>,
    pub selection: Vec<SelectionFrequency>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationReport {
    pub seed: u64,
    pub cells: Vec<SimulationCell>,
    pub replicates: Vec<ReplicateRow>,
}

fn label<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(String::from))
        .unwrap_or_default()
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

pub fn simulate(cfg: &RunConfig) -> CliResult<SimulationReport> {
    let grid = cfg.grid.as_ref().ok_or_else(|| CliError::config("simulate: section is required"))?;
    let mut cells = Vec::new();
    let mut replicates = Vec::new();
    for spec in &grid.cells {
        let (outcome, scenario, design) = (label(&spec.outcome_kind), label(&spec.scenario), label(&spec.design));
        let reports: Vec<ReplicateReport> = run_replicates(spec, &cfg.roster, grid.replicates, cfg.seed);
        for rep in &reports {
            for r in &rep.results {
                replicates.push(ReplicateRow {
                    outcome: outcome.clone(),
                    scenario: scenario.clone(),
                    design: design.clone(),
                    n: spec.n,
                    replicate: rep.replicate,
                    truth: rep.truth,
                    estimator: r.estimator.clone(),
                    estimate: r.estimate,
                    ci_lower: r.ci.map(|c| c.0),
                    ci_upper: r.ci.map(|c| c.1),
                    variance: r.variance,
                    pvalue: r.pvalue,
                    reject: r.reject,
                    selected_outcome: r.selected_outcome.clone(),
                    selected_ps: r.selected_ps.clone(),
                    error: r.error.clone(),
                });
            }
        }
        let (metrics, selection) = match summarize_metrics(&reports, spec.scale().null_value()) {
            Ok(table) => {
                let rows = table
                    .rows
                    .iter()
                    .map(|m| SimulationRow {
                        outcome: outcome.clone(),
                        scenario: scenario.clone(),
                        design: design.clone(),
                        n: spec.n,
                        null_effect: spec.null_effect,
                        estimator: m.estimator.clone(),
                        replicates: m.replicates,
                        failures: m.failures,
                        coverage: m.coverage,
                        rejection_kind: if spec.null_effect { "type1" } else { "power" },
                        rejection_rate: m.rejection_rate,
                        bias: m.bias,
                        mse: m.mse,
                        variance: finite(m.variance),
                        rel_eff: m.rel_eff,
                        savings: m.savings,
                    })
                    .collect();
                (rows, table.selection)
            }
            Err(e) => {
                log::warn!("no metrics for {scenario}/{design}: {e}");
                (Vec::new(), Vec::new())
            }
        };
        cells.push(SimulationCell {
            outcome,
            scenario,
            design,
            n: spec.n,
            null_effect: spec.null_effect,
            replicates: grid.replicates,
            metrics,
            selection,
        });
    }
    Ok(SimulationReport {
        seed: cfg.seed,
        cells,
        replicates,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct PermutationRow {
    pub subgroup: String,
    pub n: usize,
    pub estimator: String,
    pub permutations: usize,
    pub rejections: usize,
    pub failures: usize,
    pub rate: f64,
    pub interval_lower: f64,
    pub interval_upper: f64,
    pub within_interval: bool,
}

pub fn permute(cfg: &RunConfig) -> CliResult<Vec<PermutationRow>> {
    let b = cfg.permutations.ok_or_else(|| CliError::config("permute.b: number of permutations is required"))?;
    let mut rows = Vec::new();
    for (name, data) in load_subgroups(cfg)? {
        for spec in &cfg.roster {
            let audit = treatment_blind_type1(&data, spec, b, cfg.seed)?;
            rows.push(PermutationRow {
                subgroup: name.clone(),
                n: data.n(),
                estimator: audit.estimator.clone(),
                permutations: audit.permutations,
                rejections: audit.rejections,
                failures: audit.failures,
                rate: audit.rate,
                interval_lower: audit.interval.0,
                interval_upper: audit.interval.1,
                within_interval: audit.within_interval(),
            });
        }
    }
    Ok(rows)
}
