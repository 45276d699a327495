//! Adaptive prespecification: cross-validated selection of the outcome
//! regression and then of the propensity score, each minimizing the
//! cross-validated mean squared influence curve, followed by a TMLE refit
//! on all data.

use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::data::{make_folds, FoldAssignment, OutcomeBounds, TrialDataset};
use crate::error::{ApsError, Result};
use crate::learners::{fit_learner, predict, LearnerFit, LearnerKind, LearnerSpec};
use crate::tmle::{
    check_estimand, clever_covariates, fluctuate, influence_curve, initial_predictions, tmle_from_fits,
    unit_means, unit_outcome, EstimandSpec, TargetedPredictions, TmleFit,
};

/// Candidate roster size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Small,
    Large,
}

/// Small-trial roster: unadjusted plus one working GLM per covariate.
pub fn small_candidates(p: usize, ps: bool) -> Vec<LearnerSpec> {
    let make = if ps { LearnerSpec::propensity } else { LearnerSpec::outcome };
    std::iter::once(LearnerKind::Unadjusted)
        .chain((0..p).map(LearnerKind::UnivariateGlm))
        .map(make)
        .collect()
}

/// Large-trial roster for the outcome regression (`ps = false`) or the
/// propensity score (`ps = true`).
pub fn large_candidates(p: usize, ps: bool) -> Vec<LearnerSpec> {
    let mut out = small_candidates(p, ps);
    if p == 0 {
        return out;
    }
    if ps {
        out.extend(
            [LearnerKind::MainTermsGlm, LearnerKind::Stepwise, LearnerKind::Lasso]
                .map(LearnerSpec::propensity),
        );
    } else {
        out.extend(
            [
                LearnerKind::MainTermsGlm,
                LearnerKind::Stepwise,
                LearnerKind::StepwiseInteractions,
                LearnerKind::Lasso,
                LearnerKind::Mars,
            ]
            .map(LearnerSpec::outcome),
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApsConfig {
    pub outcome_candidates: Vec<LearnerSpec>,
    pub ps_candidates: Vec<LearnerSpec>,
    pub folds: usize,
    pub seed: u64,
    pub estimand: EstimandSpec,
}

impl ApsConfig {
    pub fn preset(preset: Preset, p: usize, estimand: EstimandSpec, seed: u64) -> Self {
        let roster = match preset {
            Preset::Small => small_candidates,
            Preset::Large => large_candidates,
        };
        Self {
            outcome_candidates: roster(p, false),
            ps_candidates: roster(p, true),
            folds: 5,
            seed,
            estimand,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(ApsError::Fold(format!("need at least 2 folds, got {}", self.folds)));
        }
        let has_unadj = |c: &[LearnerSpec]| c.iter().any(|s| s.kind == LearnerKind::Unadjusted);
        if !has_unadj(&self.outcome_candidates) || !has_unadj(&self.ps_candidates) {
            return Err(ApsError::Selection(
                "both candidate lists must include the unadjusted estimator".into(),
            ));
        }
        Ok(())
    }
}

fn finite_or_null<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateRisk {
    pub label: String,
    pub family: String,
    /// `+inf` (serialized as null) for failed candidates.
    #[serde(serialize_with = "finite_or_null")]
    pub risk: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateFailure {
    pub stage: u8,
    pub index: usize,
    pub label: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvRiskLedger {
    pub stage1: Vec<CandidateRisk>,
    pub stage2: Vec<CandidateRisk>,
    pub selected_outcome: usize,
    pub selected_ps: usize,
    pub failures: Vec<CandidateFailure>,
}

impl CvRiskLedger {
    pub fn selected_outcome_label(&self) -> &str {
        &self.stage1[self.selected_outcome].label
    }

    pub fn selected_ps_label(&self) -> &str {
        &self.stage2[self.selected_ps].label
    }
}

/// Seed handed to learners fitted on training fold `v`.
fn fold_seed(seed: u64, v: usize) -> u64 {
    seed ^ (v as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Fold-split unit-scale data shared by every candidate evaluation.
struct CvContext {
    bounds: OutcomeBounds,
    folds: FoldAssignment,
    train: Vec<TrialDataset>,
    valid: Vec<TrialDataset>,
    estimand: EstimandSpec,
}

/// Outcome of evaluating one candidate: its risk or the reason it failed.
type Evaluation<T> = std::result::Result<T, String>;

impl CvContext {
    fn new(unit: &TrialDataset, bounds: OutcomeBounds, folds: &FoldAssignment, estimand: EstimandSpec) -> Result<Self> {
        if folds.fold_of.len() != unit.n() {
            return Err(ApsError::Fold("fold assignment does not match the data".into()));
        }
        let mut train = Vec::with_capacity(folds.v);
        let mut valid = Vec::with_capacity(folds.v);
        for v in 0..folds.v {
            let t = unit.select(&folds.training(v))?;
            let va = unit.select(&folds.validation(v))?;
            if t.n_treated() == 0 || t.n_treated() == t.n() || va.n() == 0 {
                return Err(ApsError::Fold(format!("fold {v} leaves an arm empty")));
            }
            train.push(t);
            valid.push(va);
        }
        Ok(Self {
            bounds,
            folds: folds.clone(),
            train,
            valid,
            estimand,
        })
    }

    fn finish(&self, fold_risks: Vec<f64>) -> Evaluation<f64> {
        let risk = fold_risks.iter().sum::<f64>() / fold_risks.len() as f64;
        if risk.is_finite() {
            Ok(risk)
        } else {
            Err("non-finite cross-validated risk".into())
        }
    }

    fn mean_sq_ic(&self, va: &TrialDataset, preds: &TargetedPredictions) -> f64 {
        let (m1, m0) = unit_means(preds);
        let ic = influence_curve(va.outcome(), va.treatment(), preds, m1, m0, self.estimand, &self.bounds);
        ic.iter().map(|d| d * d).sum::<f64>() / ic.len() as f64
    }

    /// Stage 1: untargeted validation ICs with the known propensity score.
    fn stage1(&self, spec: &LearnerSpec) -> Evaluation<(f64, Vec<LearnerFit>)> {
        let mut fits = Vec::with_capacity(self.folds.v);
        let mut risks = Vec::with_capacity(self.folds.v);
        for v in 0..self.folds.v {
            let fit = fit_learner(spec, &self.train[v], fold_seed(self.folds.seed, v)).map_err(|e| e.to_string())?;
            let va = &self.valid[v];
            let (i1, i0) = initial_predictions(&fit, va).map_err(|e| e.to_string())?;
            let preds = TargetedPredictions::untargeted(i1, i0, vec![va.allocation_prob(); va.n()]);
            risks.push(self.mean_sq_ic(va, &preds));
            fits.push(fit);
        }
        Ok((self.finish(risks)?, fits))
    }

    /// Stage 2: fluctuation fitted on the training folds, applied to the
    /// validation fold, targeted validation ICs.
    fn stage2(&self, outcome_fits: &[LearnerFit], ps_spec: &LearnerSpec) -> Evaluation<f64> {
        let mut risks = Vec::with_capacity(self.folds.v);
        for v in 0..self.folds.v {
            let tr = &self.train[v];
            let va = &self.valid[v];
            let err = |e: ApsError| e.to_string();
            let ps_fit = fit_learner(ps_spec, tr, fold_seed(self.folds.seed, v)).map_err(err)?;
            let (t1, t0) = initial_predictions(&outcome_fits[v], tr).map_err(err)?;
            let g_tr = predict(&ps_fit, tr, None).map_err(err)?;
            let (h1, h0) = clever_covariates(&g_tr, tr.treatment());
            let f = fluctuate(&t1, &t0, &h1, &h0, tr.outcome()).map_err(err)?;
            if !f.converged {
                return Err(format!("fluctuation did not converge in fold {v}"));
            }
            let (i1, i0) = initial_predictions(&outcome_fits[v], va).map_err(err)?;
            let g_va = predict(&ps_fit, va, None).map_err(err)?;
            let preds = TargetedPredictions::with_fluctuation(i1, i0, g_va, f.eps1, f.eps0);
            risks.push(self.mean_sq_ic(va, &preds));
        }
        self.finish(risks)
    }
}

fn prepare(data: &TrialDataset, folds: &FoldAssignment, estimand: EstimandSpec) -> Result<CvContext> {
    check_estimand(data, estimand)?;
    let (unit, bounds) = unit_outcome(data)?;
    CvContext::new(&unit, bounds, folds, estimand)
}

/// Cross-validated mean squared untargeted IC of an outcome candidate,
/// with the propensity score treated as known. `+inf` if the candidate
/// fails in any fold.
pub fn cv_risk_stage1(
    data: &TrialDataset,
    candidate: &LearnerSpec,
    folds: &FoldAssignment,
    estimand: EstimandSpec,
) -> Result<f64> {
    let ctx = prepare(data, folds, estimand)?;
    Ok(ctx.stage1(candidate).map(|r| r.0).unwrap_or(f64::INFINITY))
}

/// Cross-validated mean squared targeted IC of a propensity candidate
/// paired with the selected outcome learner. `+inf` on failure.
pub fn cv_risk_stage2(
    data: &TrialDataset,
    selected_outcome: &LearnerSpec,
    ps_candidate: &LearnerSpec,
    folds: &FoldAssignment,
    estimand: EstimandSpec,
) -> Result<f64> {
    let ctx = prepare(data, folds, estimand)?;
    let Ok((_, fits)) = ctx.stage1(selected_outcome) else {
        return Ok(f64::INFINITY);
    };
    Ok(ctx.stage2(&fits, ps_candidate).unwrap_or(f64::INFINITY))
}

/// Index of the smallest finite risk; ties go to the earliest index.
pub fn argmin_risk(risks: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &r) in risks.iter().enumerate() {
        if r.is_finite() && best.map_or(true, |b| r < risks[b]) {
            best = Some(i);
        }
    }
    best
}

fn risk_table(specs: &[LearnerSpec], risks: &[f64], names: &[String]) -> Vec<CandidateRisk> {
    specs
        .iter()
        .zip(risks)
        .map(|(s, &risk)| CandidateRisk {
            label: s.label(names),
            family: s.kind.family().to_string(),
            risk,
        })
        .collect()
}

/// Stage-1 selection over `config.outcome_candidates`. Returns the index,
/// the risk table and the per-fold fits of every candidate.
fn run_stage1(
    ctx: &CvContext,
    config: &ApsConfig,
    names: &[String],
    failures: &mut Vec<CandidateFailure>,
) -> Result<(usize, Vec<CandidateRisk>, Vec<LearnerFit>)> {
    let evals: Vec<Evaluation<(f64, Vec<LearnerFit>)>> =
        config.outcome_candidates.par_iter().map(|s| ctx.stage1(s)).collect();
    let mut risks = Vec::with_capacity(evals.len());
    let mut fits = Vec::with_capacity(evals.len());
    for (i, e) in evals.into_iter().enumerate() {
        match e {
            Ok((r, f)) => {
                risks.push(r);
                fits.push(f);
            }
            Err(reason) => {
                log::warn!("outcome candidate {i} failed: {reason}");
                failures.push(CandidateFailure {
                    stage: 1,
                    index: i,
                    label: config.outcome_candidates[i].label(names),
                    reason,
                });
                risks.push(f64::INFINITY);
                fits.push(Vec::new());
            }
        }
    }
    let sel = argmin_risk(&risks).ok_or_else(|| ApsError::Selection("every outcome candidate failed".into()))?;
    let table = risk_table(&config.outcome_candidates, &risks, names);
    Ok((sel, table, fits.swap_remove(sel)))
}

/// Selects the outcome regression among `config.outcome_candidates`.
pub fn select_outcome_learner(
    data: &TrialDataset,
    config: &ApsConfig,
    folds: &FoldAssignment,
) -> Result<(usize, Vec<CandidateRisk>)> {
    config.validate()?;
    let ctx = prepare(data, folds, config.estimand)?;
    let mut failures = Vec::new();
    let (sel, table, _) = run_stage1(&ctx, config, data.covariate_names(), &mut failures)?;
    Ok((sel, table))
}

/// Two-stage selection followed by a TMLE refit on all data with the
/// selected outcome and propensity learners.
pub fn fit_aps_tmle(data: &TrialDataset, config: &ApsConfig) -> Result<(TmleFit, CvRiskLedger)> {
    config.validate()?;
    check_estimand(data, config.estimand)?;
    let (unit, bounds) = unit_outcome(data)?;
    let folds = make_folds(&unit, config.folds, config.seed)?;
    let ctx = CvContext::new(&unit, bounds, &folds, config.estimand)?;
    let names = data.covariate_names();
    let mut failures = Vec::new();

    let (sel_o, stage1, outcome_fits) = run_stage1(&ctx, config, names, &mut failures)?;

    let evals: Vec<Evaluation<f64>> = config
        .ps_candidates
        .par_iter()
        .map(|s| ctx.stage2(&outcome_fits, s))
        .collect();
    let mut risks = Vec::with_capacity(evals.len());
    for (i, e) in evals.into_iter().enumerate() {
        match e {
            Ok(r) => risks.push(r),
            Err(reason) => {
                log::warn!("propensity candidate {i} failed: {reason}");
                failures.push(CandidateFailure {
                    stage: 2,
                    index: i,
                    label: config.ps_candidates[i].label(names),
                    reason,
                });
                risks.push(f64::INFINITY);
            }
        }
    }
    let sel_p = argmin_risk(&risks).ok_or_else(|| ApsError::Selection("every propensity candidate failed".into()))?;
    let stage2 = risk_table(&config.ps_candidates, &risks, names);

    let outcome_fit = fit_learner(&config.outcome_candidates[sel_o], &unit, config.seed)?;
    let ps_fit = fit_learner(&config.ps_candidates[sel_p], &unit, config.seed)?;
    let fit = tmle_from_fits(&unit, &bounds, &outcome_fit, &ps_fit, config.estimand)?;
    Ok((
        fit,
        CvRiskLedger {
            stage1,
            stage2,
            selected_outcome: sel_o,
            selected_ps: sel_p,
            failures,
        },
    ))
}
