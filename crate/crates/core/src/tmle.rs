//! Targeted minimum-loss estimation of treatment-specific means and their
//! contrasts, with influence-curve based Wald inference.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::data::{OutcomeBounds, OutcomeKind, TrialDataset};
use crate::error::{ApsError, Result};
use crate::learners::{fit_glm_irls, fit_learner, predict, LearnerFit, LearnerSpec, Link};
use crate::linalg::{expit, logit, mean, sample_variance};

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Population,
    Conditional,
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Difference,
    Ratio,
}

impl Scale {
    /// Effect value under no treatment effect.
    pub fn null_value(self) -> f64 {
        match self {
            Scale::Difference => 0.0,
            Scale::Ratio => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EstimandSpec {
    pub target: Target,
    pub scale: Scale,
}

impl EstimandSpec {
    pub fn new(target: Target, scale: Scale) -> Self {
        Self { target, scale }
    }
}

/// Initial and targeted counterfactual predictions on the unit outcome scale.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetedPredictions {
    pub initial_1: Vec<f64>,
    pub initial_0: Vec<f64>,
    pub targeted_1: Vec<f64>,
    pub targeted_0: Vec<f64>,
    pub ps_hat: Vec<f64>,
    pub eps1: f64,
    pub eps0: f64,
    pub targeted_flag: bool,
}

impl TargetedPredictions {
    /// Predictions with no fluctuation applied.
    pub fn untargeted(initial_1: Vec<f64>, initial_0: Vec<f64>, ps_hat: Vec<f64>) -> Self {
        Self {
            targeted_1: initial_1.clone(),
            targeted_0: initial_0.clone(),
            initial_1,
            initial_0,
            ps_hat,
            eps1: 0.0,
            eps0: 0.0,
            targeted_flag: false,
        }
    }

    /// Applies fluctuation coefficients to the initial predictions.
    pub fn with_fluctuation(initial_1: Vec<f64>, initial_0: Vec<f64>, ps_hat: Vec<f64>, eps1: f64, eps0: f64) -> Self {
        let (targeted_1, targeted_0) = target_predictions(&initial_1, &initial_0, eps1, eps0, &ps_hat);
        Self {
            initial_1,
            initial_0,
            targeted_1,
            targeted_0,
            ps_hat,
            eps1,
            eps0,
            targeted_flag: true,
        }
    }
}

/// Result of a full TMLE run. Estimates are on the original outcome scale.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TmleFit {
    pub estimand: EstimandSpec,
    pub psi1: f64,
    pub psi0: f64,
    pub effect: f64,
    pub ic: Vec<f64>,
    pub variance: f64,
    pub ci: (f64, f64),
    pub pvalue: f64,
    pub learners: (LearnerSpec, LearnerSpec),
    pub eps: (f64, f64),
    /// All nuisance fits and the fluctuation converged.
    pub converged: bool,
}

/// Wald summary of an influence curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Wald {
    pub variance: f64,
    pub ci: (f64, f64),
    pub pvalue: f64,
}

/// Fitted fluctuation coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fluctuation {
    pub eps1: f64,
    pub eps0: f64,
    pub converged: bool,
}

pub fn initial_predictions(fit: &LearnerFit, data: &TrialDataset) -> Result<(Vec<f64>, Vec<f64>)> {
    Ok((predict(fit, data, Some(1))?, predict(fit, data, Some(0))?))
}

pub fn clever_covariates(ps_hat: &[f64], a: &[u8]) -> (Vec<f64>, Vec<f64>) {
    ps_hat
        .iter()
        .zip(a)
        .map(|(&g, &a)| {
            if a == 1 {
                (1.0 / g, 0.0)
            } else {
                (0.0, 1.0 / (1.0 - g))
            }
        })
        .unzip()
}

/// Logistic regression of `y` on `(h1, h0)` with offset `logit` of the
/// observed-arm initial prediction and no intercept.
pub fn fluctuate(initial_1: &[f64], initial_0: &[f64], h1: &[f64], h0: &[f64], y: &[f64]) -> Result<Fluctuation> {
    let offset: Vec<f64> = h1
        .iter()
        .enumerate()
        .map(|(i, &h)| logit(if h > 0.0 { initial_1[i] } else { initial_0[i] }))
        .collect();
    let fit = fit_glm_irls(&[h1.to_vec(), h0.to_vec()], y, Link::Logit, Some(&offset))?;
    let eps1 = fit.coefficients[0];
    let eps0 = fit.coefficients[1];
    Ok(Fluctuation {
        eps1,
        eps0,
        converged: fit.converged && eps1.is_finite() && eps0.is_finite(),
    })
}

pub fn target_predictions(
    initial_1: &[f64],
    initial_0: &[f64],
    eps1: f64,
    eps0: f64,
    ps_hat: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let shift = |q: f64, step: f64| if step == 0.0 { q } else { expit(logit(q) + step) };
    let t1 = initial_1
        .iter()
        .zip(ps_hat)
        .map(|(&q, &g)| shift(q, eps1 / g))
        .collect();
    let t0 = initial_0
        .iter()
        .zip(ps_hat)
        .map(|(&q, &g)| shift(q, eps0 / (1.0 - g)))
        .collect();
    (t1, t0)
}

/// Fits the fluctuation on `(a, y)` and returns targeted predictions.
pub fn target(
    initial_1: Vec<f64>,
    initial_0: Vec<f64>,
    ps_hat: Vec<f64>,
    a: &[u8],
    y: &[f64],
) -> Result<(TargetedPredictions, bool)> {
    let (h1, h0) = clever_covariates(&ps_hat, a);
    let f = fluctuate(&initial_1, &initial_0, &h1, &h0, y)?;
    Ok((
        TargetedPredictions::with_fluctuation(initial_1, initial_0, ps_hat, f.eps1, f.eps0),
        f.converged,
    ))
}

/// Treatment-specific means on the unit scale.
pub fn unit_means(preds: &TargetedPredictions) -> (f64, f64) {
    (mean(&preds.targeted_1), mean(&preds.targeted_0))
}

/// Returns `(psi1, psi0, effect)` on the original outcome scale.
pub fn estimate_effect(
    preds: &TargetedPredictions,
    estimand: EstimandSpec,
    bounds: &OutcomeBounds,
) -> Result<(f64, f64, f64)> {
    let (m1, m0) = unit_means(preds);
    let psi1 = bounds.unscale(m1);
    let psi0 = bounds.unscale(m0);
    let effect = match estimand.scale {
        Scale::Difference => psi1 - psi0,
        Scale::Ratio => {
            if !(psi1 > 0.0 && psi0 > 0.0) {
                return Err(ApsError::Estimand(format!(
                    "ratio scale needs positive means, got {psi1} and {psi0}"
                )));
            }
            psi1 / psi0
        }
    };
    Ok((psi1, psi0, effect))
}

/// Influence curve of the effect estimator.
///
/// `y` is the unit-scale outcome and `psi1`, `psi0` the unit-scale
/// treatment-specific means. Difference-scale values are multiplied by the
/// outcome range; ratio-scale values are for the log ratio.
pub fn influence_curve(
    y: &[f64],
    a: &[u8],
    preds: &TargetedPredictions,
    psi1: f64,
    psi0: f64,
    estimand: EstimandSpec,
    bounds: &OutcomeBounds,
) -> Vec<f64> {
    let population = estimand.target == Target::Population;
    (0..y.len())
        .map(|i| {
            let g = preds.ps_hat[i];
            let (q1, q0) = (preds.targeted_1[i], preds.targeted_0[i]);
            let (mut d1, mut d0) = if a[i] == 1 {
                ((y[i] - q1) / g, 0.0)
            } else {
                (0.0, (y[i] - q0) / (1.0 - g))
            };
            if population {
                d1 += q1 - psi1;
                d0 += q0 - psi0;
            }
            match estimand.scale {
                Scale::Difference => (d1 - d0) * bounds.range(),
                Scale::Ratio => d1 / psi1 - d0 / psi0,
            }
        })
        .collect()
}

fn normal_two_sided(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2)
}

/// Variance, 95% CI and two-sided p-value. For the ratio scale `ic` is the
/// log-ratio influence curve and `effect` the ratio itself.
pub fn wald_inference(ic: &[f64], effect: f64, scale: Scale) -> Result<Wald> {
    let n = ic.len();
    if n < 2 {
        return Err(ApsError::Contract("Wald inference needs at least 2 observations".into()));
    }
    let variance = sample_variance(ic) / n as f64;
    let se = variance.sqrt();
    let centre = match scale {
        Scale::Difference => effect,
        Scale::Ratio => {
            if effect <= 0.0 {
                return Err(ApsError::Estimand(format!("non-positive ratio {effect}")));
            }
            effect.ln()
        }
    };
    let back = |v: f64| match scale {
        Scale::Difference => v,
        Scale::Ratio => v.exp(),
    };
    if !variance.is_finite() {
        return Err(ApsError::Numerical("non-finite influence-curve variance".into()));
    }
    if se == 0.0 {
        let pvalue = if effect != scale.null_value() { 0.0 } else { 1.0 };
        return Ok(Wald {
            variance,
            ci: (effect, effect),
            pvalue,
        });
    }
    Ok(Wald {
        variance,
        ci: (back(centre - Z_95 * se), back(centre + Z_95 * se)),
        pvalue: normal_two_sided(centre / se),
    })
}

/// The outcome mapped to the unit interval, with the bounds used.
pub fn unit_outcome(data: &TrialDataset) -> Result<(std::borrow::Cow<'_, TrialDataset>, OutcomeBounds)> {
    match data.outcome_kind() {
        OutcomeKind::Binary => Ok((std::borrow::Cow::Borrowed(data), OutcomeBounds::UNIT)),
        OutcomeKind::Continuous => {
            let (d, b) = data.bound_outcome()?;
            Ok((std::borrow::Cow::Owned(d), b))
        }
    }
}

pub(crate) fn check_estimand(data: &TrialDataset, estimand: EstimandSpec) -> Result<()> {
    if data.outcome_kind() == OutcomeKind::Continuous && estimand.scale == Scale::Ratio {
        return Err(ApsError::Estimand(
            "ratio scale is only supported for binary outcomes".into(),
        ));
    }
    Ok(())
}

/// TMLE from already fitted nuisance models on a unit-scale dataset.
pub(crate) fn tmle_from_fits(
    unit: &TrialDataset,
    bounds: &OutcomeBounds,
    outcome_fit: &LearnerFit,
    ps_fit: &LearnerFit,
    estimand: EstimandSpec,
) -> Result<TmleFit> {
    let (i1, i0) = initial_predictions(outcome_fit, unit)?;
    let ps_hat = predict(ps_fit, unit, None)?;
    let (preds, fluct_ok) = target(i1, i0, ps_hat, unit.treatment(), unit.outcome())?;
    let (psi1, psi0, effect) = estimate_effect(&preds, estimand, bounds)?;
    let (m1, m0) = unit_means(&preds);
    let ic = influence_curve(unit.outcome(), unit.treatment(), &preds, m1, m0, estimand, bounds);
    let wald = wald_inference(&ic, effect, estimand.scale)?;
    Ok(TmleFit {
        estimand,
        psi1,
        psi0,
        effect,
        ic,
        variance: wald.variance,
        ci: wald.ci,
        pvalue: wald.pvalue,
        learners: (outcome_fit.spec, ps_fit.spec),
        eps: (preds.eps1, preds.eps0),
        converged: fluct_ok && outcome_fit.converged && ps_fit.converged,
    })
}

/// Full TMLE pipeline: initial fit, targeting against the fitted (or known)
/// propensity score, contrast, and Wald inference. `seed` drives any
/// resampling inside the learners.
pub fn run_tmle(
    data: &TrialDataset,
    outcome_spec: &LearnerSpec,
    ps_spec: &LearnerSpec,
    estimand: EstimandSpec,
    seed: u64,
) -> Result<TmleFit> {
    check_estimand(data, estimand)?;
    let (unit, bounds) = unit_outcome(data)?;
    let outcome_fit = fit_learner(outcome_spec, &unit, seed)?;
    let ps_fit = fit_learner(ps_spec, &unit, seed)?;
    tmle_from_fits(&unit, &bounds, &outcome_fit, &ps_fit, estimand)
}
