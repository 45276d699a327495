//! Candidate estimators of the outcome regression `E(Y|A,W)` and the
//! propensity score `P(A=1|W)`, all behind one fit/predict contract.

mod glm;
mod lasso;
mod mars;
mod screen;
mod stepwise;

use serde::{Deserialize, Serialize};

use crate::data::TrialDataset;
use crate::error::{ApsError, Result};
use crate::linalg::expit;

pub use glm::{fit_glm_irls, GlmFit};
pub use lasso::{fit_lasso, lasso_at_lambda, lambda_max, LassoFit};
pub use mars::{fit_mars, MarsModel};
pub use screen::screen_correlation;
pub use stepwise::fit_stepwise;

/// Clipping bounds for outcome-regression predictions.
pub const OUTCOME_CLIP: f64 = 1e-4;
/// Clipping bounds for propensity-score predictions.
pub const PS_CLIP: f64 = 0.01;

/// Which nuisance function a learner estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Outcome,
    Propensity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Logit,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LearnerKind {
    Unadjusted,
    /// Working GLM adjusting for the single covariate at this index.
    UnivariateGlm(usize),
    MainTermsGlm,
    Stepwise,
    StepwiseInteractions,
    Lasso,
    Mars,
    ScreenedMars,
}

impl LearnerKind {
    /// Short family label used in selection tables.
    pub fn family(&self) -> &'static str {
        match self {
            LearnerKind::Unadjusted => "Unadj",
            LearnerKind::UnivariateGlm(_) => "GLM",
            LearnerKind::MainTermsGlm => "Main",
            LearnerKind::Stepwise => "Step",
            LearnerKind::StepwiseInteractions => "StepInt",
            LearnerKind::Lasso => "LASSO",
            LearnerKind::Mars => "MARS",
            LearnerKind::ScreenedMars => "ScreenMARS",
        }
    }
}

/// Tuning settings shared by all learner kinds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub lasso_lambdas: usize,
    pub lasso_folds: usize,
    pub mars_degree: usize,
    pub mars_max_terms: usize,
    pub mars_penalty: f64,
    pub screen_alpha: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            lasso_lambdas: 100,
            lasso_folds: 5,
            mars_degree: 2,
            mars_max_terms: 21,
            mars_penalty: 3.0,
            screen_alpha: 0.10,
        }
    }
}

/// A candidate regression algorithm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearnerSpec {
    pub kind: LearnerKind,
    pub role: Role,
    pub link: Link,
    #[serde(default)]
    pub hyper: Hyperparams,
}

impl LearnerSpec {
    pub fn outcome(kind: LearnerKind) -> Self {
        Self {
            kind,
            role: Role::Outcome,
            link: Link::Logit,
            hyper: Hyperparams::default(),
        }
    }

    pub fn propensity(kind: LearnerKind) -> Self {
        Self {
            kind,
            role: Role::Propensity,
            link: Link::Logit,
            hyper: Hyperparams::default(),
        }
    }

    /// Human-readable name, resolving covariate indices through `names`.
    pub fn label(&self, names: &[String]) -> String {
        match self.kind {
            LearnerKind::UnivariateGlm(j) => format!(
                "GLM({})",
                names.get(j).map(String::as_str).unwrap_or("?")
            ),
            k => k.family().to_string(),
        }
    }
}

/// A predictor variable: the treatment indicator or a covariate column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Var {
    Treatment,
    Covariate(usize),
}

impl Var {
    #[inline]
    pub(crate) fn value(self, data: &TrialDataset, i: usize, set_treatment: Option<u8>) -> f64 {
        match self {
            Var::Treatment => set_treatment.unwrap_or(data.treatment()[i]) as f64,
            Var::Covariate(j) => data.covariate(j)[i],
        }
    }

    pub(crate) fn column(self, data: &TrialDataset, set_treatment: Option<u8>) -> Vec<f64> {
        match (self, set_treatment) {
            (Var::Treatment, Some(a)) => vec![a as f64; data.n()],
            (Var::Treatment, None) => data.treatment().iter().map(|&a| a as f64).collect(),
            (Var::Covariate(j), _) => data.covariate(j).to_vec(),
        }
    }
}

/// A column of a GLM design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Term {
    Intercept,
    Main(Var),
    Product(Var, Var),
}

impl Term {
    pub(crate) fn column(&self, data: &TrialDataset, set_treatment: Option<u8>) -> Vec<f64> {
        match *self {
            Term::Intercept => vec![1.0; data.n()],
            Term::Main(v) => v.column(data, set_treatment),
            Term::Product(u, v) => (0..data.n())
                .map(|i| u.value(data, i, set_treatment) * v.value(data, i, set_treatment))
                .collect(),
        }
    }
}

pub(crate) fn design(terms: &[Term], data: &TrialDataset, set_treatment: Option<u8>) -> Vec<Vec<f64>> {
    terms.iter().map(|t| t.column(data, set_treatment)).collect()
}

/// Fitted state of a learner.
#[derive(Debug, Clone, PartialEq)]
pub enum FittedModel {
    /// Saturated-in-treatment outcome model: one mean per arm.
    ArmMeans { treated: f64, control: f64 },
    /// Known constant propensity score.
    Constant(f64),
    Glm {
        terms: Vec<Term>,
        coefficients: Vec<f64>,
        link: Link,
    },
    Mars(MarsModel),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnerFit {
    pub spec: LearnerSpec,
    pub model: FittedModel,
    pub iterations: usize,
    pub converged: bool,
    n_covariates: usize,
}

impl LearnerFit {
    pub fn n_covariates(&self) -> usize {
        self.n_covariates
    }
}

/// Base terms every outcome-role model contains.
pub(crate) fn base_terms(role: Role) -> Vec<Term> {
    match role {
        Role::Outcome => vec![Term::Intercept, Term::Main(Var::Treatment)],
        Role::Propensity => vec![Term::Intercept],
    }
}

pub(crate) fn response(data: &TrialDataset, role: Role) -> Vec<f64> {
    match role {
        Role::Outcome => data.outcome().to_vec(),
        Role::Propensity => data.treatment().iter().map(|&a| a as f64).collect(),
    }
}

/// Predictor variables available to a learner in `role`.
pub(crate) fn predictors(data: &TrialDataset, role: Role) -> Vec<Var> {
    let mut vars = Vec::with_capacity(data.n_covariates() + 1);
    if role == Role::Outcome {
        vars.push(Var::Treatment);
    }
    vars.extend((0..data.n_covariates()).map(Var::Covariate));
    vars
}

fn glm_model(
    spec: &LearnerSpec,
    terms: Vec<Term>,
    data: &TrialDataset,
) -> Result<(FittedModel, usize, bool)> {
    let y = response(data, spec.role);
    let fit = fit_glm_irls(&design(&terms, data, None), &y, spec.link, None)?;
    Ok((
        FittedModel::Glm {
            terms,
            coefficients: fit.coefficients,
            link: spec.link,
        },
        fit.iterations,
        fit.converged,
    ))
}

/// Fits `spec` on `data`. For the outcome role the outcome must already be
/// on the unit interval. `seed` drives any internal resampling.
pub fn fit_learner(spec: &LearnerSpec, data: &TrialDataset, seed: u64) -> Result<LearnerFit> {
    if spec.role == Role::Propensity && spec.link != Link::Logit {
        return Err(ApsError::Contract("propensity learners use the logit link".into()));
    }
    if spec.role == Role::Outcome
        && spec.link == Link::Logit
        && data.outcome().iter().any(|&y| !(0.0..=1.0).contains(&y))
    {
        return Err(ApsError::Contract(
            "outcome must be bounded to [0, 1] before fitting".into(),
        ));
    }
    let p = data.n_covariates();
    let (model, iterations, converged) = match spec.kind {
        LearnerKind::Unadjusted => match spec.role {
            Role::Outcome => {
                let (mut s1, mut n1, mut s0, mut n0) = (0.0, 0usize, 0.0, 0usize);
                for (&a, &y) in data.treatment().iter().zip(data.outcome()) {
                    if a == 1 {
                        s1 += y;
                        n1 += 1;
                    } else {
                        s0 += y;
                        n0 += 1;
                    }
                }
                (
                    FittedModel::ArmMeans {
                        treated: s1 / n1 as f64,
                        control: s0 / n0 as f64,
                    },
                    0,
                    true,
                )
            }
            Role::Propensity => (FittedModel::Constant(data.allocation_prob()), 0, true),
        },
        LearnerKind::UnivariateGlm(j) => {
            if j >= p {
                return Err(ApsError::Contract(format!(
                    "covariate index {j} out of range for {p} covariates"
                )));
            }
            let mut terms = base_terms(spec.role);
            terms.push(Term::Main(Var::Covariate(j)));
            glm_model(spec, terms, data)?
        }
        LearnerKind::MainTermsGlm => {
            let mut terms = base_terms(spec.role);
            terms.extend((0..p).map(|j| Term::Main(Var::Covariate(j))));
            glm_model(spec, terms, data)?
        }
        LearnerKind::Stepwise | LearnerKind::StepwiseInteractions => {
            let interactions = spec.kind == LearnerKind::StepwiseInteractions;
            let (terms, fit) = fit_stepwise(data, spec.role, interactions, spec.link)?;
            (
                FittedModel::Glm {
                    terms,
                    coefficients: fit.coefficients,
                    link: spec.link,
                },
                fit.iterations,
                fit.converged,
            )
        }
        LearnerKind::Lasso => {
            let fit = fit_lasso(data, spec.role, spec.link, &spec.hyper, seed)?;
            (
                FittedModel::Glm {
                    terms: fit.terms,
                    coefficients: fit.coefficients,
                    link: spec.link,
                },
                fit.iterations,
                fit.converged,
            )
        }
        LearnerKind::Mars | LearnerKind::ScreenedMars => {
            let mut vars = predictors(data, spec.role);
            if spec.kind == LearnerKind::ScreenedMars && p > 0 {
                let y = response(data, spec.role);
                let keep = screen_correlation(data.covariates(), &y, spec.hyper.screen_alpha)?;
                vars.retain(|v| match v {
                    Var::Covariate(j) => keep.contains(j),
                    Var::Treatment => true,
                });
            }
            let (model, iterations, converged) = fit_mars(data, spec.role, &vars, spec.link, &spec.hyper)?;
            (FittedModel::Mars(model), iterations, converged)
        }
    };
    Ok(LearnerFit {
        spec: *spec,
        model,
        iterations,
        converged,
        n_covariates: p,
    })
}

/// Predictions on `data`, optionally with the treatment overridden.
///
/// Outcome predictions are clipped to `[1e-4, 1 - 1e-4]`, propensity
/// predictions to `[0.01, 0.99]`.
pub fn predict(fit: &LearnerFit, data: &TrialDataset, set_treatment: Option<u8>) -> Result<Vec<f64>> {
    if data.n_covariates() != fit.n_covariates {
        return Err(ApsError::Contract(format!(
            "model trained on {} covariates, got {}",
            fit.n_covariates,
            data.n_covariates()
        )));
    }
    let n = data.n();
    let raw: Vec<f64> = match &fit.model {
        FittedModel::ArmMeans { treated, control } => (0..n)
            .map(|i| {
                if set_treatment.unwrap_or(data.treatment()[i]) == 1 {
                    *treated
                } else {
                    *control
                }
            })
            .collect(),
        FittedModel::Constant(p) => vec![*p; n],
        FittedModel::Glm {
            terms,
            coefficients,
            link,
        } => {
            let mut eta = vec![0.0; n];
            for (t, &b) in terms.iter().zip(coefficients) {
                if b == 0.0 {
                    continue;
                }
                let col = t.column(data, set_treatment);
                for (e, x) in eta.iter_mut().zip(&col) {
                    *e += b * x;
                }
            }
            apply_link(eta, *link)
        }
        FittedModel::Mars(m) => apply_link(m.linear_predictor(data, set_treatment), m.link),
    };
    let eps = match fit.spec.role {
        Role::Outcome => OUTCOME_CLIP,
        Role::Propensity => PS_CLIP,
    };
    Ok(raw.into_iter().map(|v| clip(v, eps)).collect())
}

fn apply_link(eta: Vec<f64>, link: Link) -> Vec<f64> {
    match link {
        Link::Logit => eta.into_iter().map(expit).collect(),
        Link::Identity => eta,
    }
}

fn clip(v: f64, eps: f64) -> f64 {
    if v.is_nan() {
        0.5
    } else {
        v.clamp(eps, 1.0 - eps)
    }
}
