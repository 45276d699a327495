//! Performance summaries over replicate reports.

use std::collections::BTreeMap;

use serde::Serialize;

use super::replicate::ReplicateReport;
use crate::error::{ApsError, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorMetrics {
    pub estimator: String,
    /// Replicates with a defined truth and a successful estimate.
    pub replicates: usize,
    pub failures: usize,
    pub coverage: f64,
    /// Power under an effect, Type-I error under the null.
    pub rejection_rate: f64,
    pub bias: f64,
    pub mse: f64,
    pub variance: f64,
    /// MSE relative to the unadjusted estimator; `None` when undefined.
    pub rel_eff: Option<f64>,
    pub savings: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionFrequency {
    pub estimator: String,
    pub stage: String,
    pub learner: String,
    pub count: usize,
    pub frequency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsTable {
    pub rows: Vec<EstimatorMetrics>,
    pub selection: Vec<SelectionFrequency>,
}

impl MetricsTable {
    pub fn row(&self, estimator: &str) -> Option<&EstimatorMetrics> {
        self.rows.iter().find(|r| r.estimator == estimator)
    }

    /// Fraction of replicates where `estimator` selected a learner whose
    /// label satisfies `pred` in `stage` ("outcome" or "ps").
    pub fn selection_share(&self, estimator: &str, stage: &str, pred: impl Fn(&str) -> bool) -> f64 {
        self.selection
            .iter()
            .filter(|s| s.estimator == estimator && s.stage == stage && pred(&s.learner))
            .map(|s| s.frequency)
            .sum()
    }
}

/// Coverage, rejection rate, bias, MSE, variance of estimates, relative
/// efficiency against the `unadjusted` row and learner-selection
/// frequencies. Rejection is judged against `null_value`.
pub fn summarize_metrics(reports: &[ReplicateReport], null_value: f64) -> Result<MetricsTable> {
    let valid: Vec<&ReplicateReport> = reports.iter().filter(|r| r.truth.is_some()).collect();
    if valid.len() < 2 {
        return Err(ApsError::Contract("metrics need at least 2 usable replicates".into()));
    }
    let mut names: Vec<String> = Vec::new();
    for r in &valid {
        for e in &r.results {
            if !names.contains(&e.estimator) {
                names.push(e.estimator.clone());
            }
        }
    }

    let mut rows = Vec::new();
    let mut selection = Vec::new();
    for name in &names {
        let mut errs = Vec::new();
        let mut estimates = Vec::new();
        let (mut covered, mut rejected, mut failures) = (0usize, 0usize, 0usize);
        let mut picks: [BTreeMap<String, usize>; 2] = Default::default();
        for r in &valid {
            let truth = r.truth.expect("filtered");
            let Some(e) = r.results.iter().find(|e| &e.estimator == name) else {
                continue;
            };
            let (Some(est), Some((lo, hi))) = (e.estimate, e.ci) else {
                failures += 1;
                continue;
            };
            estimates.push(est);
            errs.push(est - truth);
            covered += (lo <= truth && truth <= hi) as usize;
            rejected += !(lo <= null_value && null_value <= hi) as usize;
            for (k, label) in [&e.selected_outcome, &e.selected_ps].into_iter().enumerate() {
                if let Some(l) = label {
                    *picks[k].entry(l.clone()).or_default() += 1;
                }
            }
        }
        let m = estimates.len();
        let mf = m.max(1) as f64;
        let mean_est = estimates.iter().sum::<f64>() / mf;
        let variance = if m > 1 {
            estimates.iter().map(|x| (x - mean_est).powi(2)).sum::<f64>() / (m - 1) as f64
        } else {
            f64::NAN
        };
        rows.push(EstimatorMetrics {
            estimator: name.clone(),
            replicates: m,
            failures,
            coverage: covered as f64 / mf,
            rejection_rate: rejected as f64 / mf,
            bias: errs.iter().sum::<f64>() / mf,
            mse: errs.iter().map(|e| e * e).sum::<f64>() / mf,
            variance,
            rel_eff: None,
            savings: None,
        });
        for (k, stage) in ["outcome", "ps"].into_iter().enumerate() {
            for (learner, &count) in &picks[k] {
                selection.push(SelectionFrequency {
                    estimator: name.clone(),
                    stage: stage.to_string(),
                    learner: learner.clone(),
                    count,
                    frequency: count as f64 / mf,
                });
            }
        }
    }

    if let Some(base) = rows.iter().find(|r| r.estimator == "unadjusted").map(|r| r.mse) {
        for r in &mut rows {
            if base > 0.0 && r.replicates > 0 {
                let re = if r.estimator == "unadjusted" { 1.0 } else { r.mse / base };
                r.rel_eff = Some(re);
                r.savings = Some(1.0 - re);
            }
        }
    }
    Ok(MetricsTable { rows, selection })
}
