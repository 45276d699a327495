//! Replicate execution: draw a trial, compute its sample effect, run every
//! estimator of the roster.

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dgp::{replicate_rng, simulate_trial, true_sample_effect, DgpSpec};
use crate::aps::{fit_aps_tmle, ApsConfig, CvRiskLedger, Preset};
use crate::data::TrialDataset;
use crate::error::Result;
use crate::learners::{LearnerKind, LearnerSpec};
use crate::tmle::{run_tmle, EstimandSpec, TmleFit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    Unadjusted,
    /// Fixed adjustment for the first covariate in the outcome regression.
    Static,
    SmallAps,
    LargeAps,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Unadjusted => "unadjusted",
            EstimatorKind::Static => "static",
            EstimatorKind::SmallAps => "small-aps",
            EstimatorKind::LargeAps => "large-aps",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        [Self::Unadjusted, Self::Static, Self::SmallAps, Self::LargeAps]
            .into_iter()
            .find(|k| k.name() == name)
    }
}

/// An estimator of the roster with its analysis settings.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorSpec {
    pub kind: EstimatorKind,
    pub estimand: EstimandSpec,
    pub folds: usize,
    /// Covariate index adjusted for by the static estimator in the outcome
    /// regression, and by the propensity score when `static_ps` is set.
    pub static_outcome: usize,
    pub static_ps: Option<usize>,
    /// Adds screened MARS to the large-trial outcome roster.
    pub screened_mars: bool,
}

impl EstimatorSpec {
    pub fn new(kind: EstimatorKind, estimand: EstimandSpec) -> Self {
        Self {
            kind,
            estimand,
            folds: 5,
            static_outcome: 0,
            static_ps: None,
            screened_mars: false,
        }
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    /// Candidate configuration for the APS kinds.
    pub fn aps_config(&self, p: usize, seed: u64) -> Option<ApsConfig> {
        let preset = match self.kind {
            EstimatorKind::SmallAps => Preset::Small,
            EstimatorKind::LargeAps => Preset::Large,
            _ => return None,
        };
        let mut cfg = ApsConfig::preset(preset, p, self.estimand, seed);
        cfg.folds = self.folds;
        if self.screened_mars && preset == Preset::Large && p > 0 {
            cfg.outcome_candidates.push(LearnerSpec::outcome(LearnerKind::ScreenedMars));
        }
        Some(cfg)
    }

    /// Runs the estimator on `data`.
    pub fn run(&self, data: &TrialDataset, seed: u64) -> Result<(TmleFit, Option<CvRiskLedger>)> {
        let unadj_ps = LearnerSpec::propensity(LearnerKind::Unadjusted);
        match self.kind {
            EstimatorKind::Unadjusted => {
                let o = LearnerSpec::outcome(LearnerKind::Unadjusted);
                Ok((run_tmle(data, &o, &unadj_ps, self.estimand, seed)?, None))
            }
            EstimatorKind::Static => {
                let o = LearnerSpec::outcome(LearnerKind::UnivariateGlm(self.static_outcome));
                let ps = self
                    .static_ps
                    .map(|j| LearnerSpec::propensity(LearnerKind::UnivariateGlm(j)))
                    .unwrap_or(unadj_ps);
                Ok((run_tmle(data, &o, &ps, self.estimand, seed)?, None))
            }
            EstimatorKind::SmallAps | EstimatorKind::LargeAps => {
                let cfg = self.aps_config(data.n_covariates(), seed).expect("APS kind");
                let (fit, ledger) = fit_aps_tmle(data, &cfg)?;
                Ok((fit, Some(ledger)))
            }
        }
    }
}

/// The simulation roster: unadjusted, static adjustment for `W1`,
/// small-trial APS and large-trial APS.
pub fn default_roster(estimand: EstimandSpec) -> Vec<EstimatorSpec> {
    [
        EstimatorKind::Unadjusted,
        EstimatorKind::Static,
        EstimatorKind::SmallAps,
        EstimatorKind::LargeAps,
    ]
    .into_iter()
    .map(|k| EstimatorSpec::new(k, estimand))
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorResult {
    pub estimator: String,
    pub estimate: Option<f64>,
    pub ci: Option<(f64, f64)>,
    pub variance: Option<f64>,
    pub pvalue: Option<f64>,
    pub reject: bool,
    pub selected_outcome: Option<String>,
    pub selected_ps: Option<String>,
    pub error: Option<String>,
}

impl EstimatorResult {
    fn from_run(name: &str, r: Result<(TmleFit, Option<CvRiskLedger>)>, null_value: f64) -> Self {
        match r {
            Ok((fit, ledger)) => Self {
                estimator: name.to_string(),
                estimate: Some(fit.effect),
                ci: Some(fit.ci),
                variance: Some(fit.variance),
                pvalue: Some(fit.pvalue),
                reject: !(fit.ci.0 <= null_value && null_value <= fit.ci.1),
                selected_outcome: ledger.as_ref().map(|l| l.selected_outcome_label().to_string()),
                selected_ps: ledger.as_ref().map(|l| l.selected_ps_label().to_string()),
                error: None,
            },
            Err(e) => {
                log::warn!("{name} failed: {e}");
                Self {
                    estimator: name.to_string(),
                    estimate: None,
                    ci: None,
                    variance: None,
                    pvalue: None,
                    reject: false,
                    selected_outcome: None,
                    selected_ps: None,
                    error: Some(e.to_string()),
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateReport {
    pub replicate: u64,
    pub seed: u64,
    /// Sample effect of the drawn counterfactuals; `None` if undefined, in
    /// which case the replicate is skipped.
    pub truth: Option<f64>,
    pub results: Vec<EstimatorResult>,
}

/// Runs replicate `index` of the study.
pub fn run_replicate(spec: &DgpSpec, roster: &[EstimatorSpec], base_seed: u64, index: u64) -> ReplicateReport {
    let mut rng = replicate_rng(base_seed, index);
    let scale = spec.scale();
    let trial = match simulate_trial(spec, &mut rng) {
        Ok(t) => t,
        Err(e) => {
            log::warn!("replicate {index} skipped: {e}");
            return ReplicateReport {
                replicate: index,
                seed: base_seed,
                truth: None,
                results: Vec::new(),
            };
        }
    };
    let analysis_seed = rng.next_u64();
    let truth = true_sample_effect(&trial.y1, &trial.y0, scale);
    let results = if truth.is_some() {
        roster
            .iter()
            .map(|e| EstimatorResult::from_run(e.name(), e.run(&trial.data, analysis_seed), scale.null_value()))
            .collect()
    } else {
        Vec::new()
    };
    ReplicateReport {
        replicate: index,
        seed: base_seed,
        truth,
        results,
    }
}

/// Runs replicates `0..r` in parallel on the current rayon pool. The
/// output order and content do not depend on scheduling.
pub fn run_replicates(spec: &DgpSpec, roster: &[EstimatorSpec], r: u64, base_seed: u64) -> Vec<ReplicateReport> {
    (0..r)
        .into_par_iter()
        .map(|i| run_replicate(spec, roster, base_seed, i))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::OutcomeKind;
    use crate::sim::dgp::{Design, Scenario};
    use crate::tmle::{Scale, Target};

    #[test]
    fn unadjusted_replicate_is_arm_mean_contrast() {
        let spec = DgpSpec::new(OutcomeKind::Continuous, Scenario::Linear, 80, Design::Simple);
        let est = EstimandSpec::new(Target::Sample, Scale::Difference);
        let roster = vec![EstimatorSpec::new(EstimatorKind::Unadjusted, est)];
        let rep = run_replicate(&spec, &roster, 11, 0);
        let trial = simulate_trial(&spec, &mut replicate_rng(11, 0)).unwrap();
        let d = &trial.data;
        let arm = |a: u8| {
            let v: Vec<f64> = (0..d.n()).filter(|&i| d.treatment()[i] == a).map(|i| d.outcome()[i]).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        let got = rep.results[0].estimate.unwrap();
        assert!((got - (arm(1) - arm(0))).abs() < 1e-10);
    }

    #[test]
    fn replicates_are_deterministic() {
        let spec = DgpSpec::new(OutcomeKind::Binary, Scenario::Linear, 100, Design::Stratified);
        let est = EstimandSpec::new(Target::Sample, Scale::Ratio);
        let roster = default_roster(est);
        assert_eq!(run_replicates(&spec, &roster[..3], 2, 5), run_replicates(&spec, &roster[..3], 2, 5));
    }
}
