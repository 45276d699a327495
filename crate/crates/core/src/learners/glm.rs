//! Generalized linear model fitting by Newton/IRLS.

use super::Link;
use crate::error::{ApsError, Result};
use crate::linalg::{cholesky_solve, expit, gram, non_aliased};

const SCORE_TOL: f64 = 1e-8;
const MAX_ITER: usize = 100;
const MIN_WEIGHT: f64 = 1e-12;

/// Result of a GLM fit. Aliased columns carry a zero coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct GlmFit {
    pub coefficients: Vec<f64>,
    pub aliased: Vec<bool>,
    pub iterations: usize,
    pub converged: bool,
    /// Fitted means on the response scale.
    pub fitted: Vec<f64>,
}

impl GlmFit {
    /// Number of estimated (non-aliased) coefficients.
    pub fn rank(&self) -> usize {
        self.aliased.iter().filter(|a| !**a).count()
    }
}

/// Binomial log-likelihood, valid for fractional responses in `[0, 1]`.
pub(crate) fn binomial_loglik(y: &[f64], mu: &[f64]) -> f64 {
    y.iter()
        .zip(mu)
        .map(|(&y, &m)| {
            let m = m.clamp(1e-300, 1.0 - 1e-16);
            let mut l = 0.0;
            if y > 0.0 {
                l += y * m.ln();
            }
            if y < 1.0 {
                l += (1.0 - y) * (1.0 - m).ln();
            }
            l
        })
        .sum()
}

fn linear_predictor(cols: &[&[f64]], beta: &[f64], offset: Option<&[f64]>, n: usize) -> Vec<f64> {
    let mut eta = match offset {
        Some(o) => o.to_vec(),
        None => vec![0.0; n],
    };
    for (c, &b) in cols.iter().zip(beta) {
        if b != 0.0 {
            for (e, x) in eta.iter_mut().zip(c.iter()) {
                *e += b * x;
            }
        }
    }
    eta
}

/// Fits `y ~ design` with the given link by maximum likelihood.
///
/// Logit fits use Newton steps with step-halving until the score norm
/// drops below 1e-8 or 100 iterations pass; identity fits solve least
/// squares directly. Aliased columns are dropped left to right.
pub fn fit_glm_irls(
    design: &[Vec<f64>],
    y: &[f64],
    link: Link,
    offset: Option<&[f64]>,
) -> Result<GlmFit> {
    fit_glm_warm(design, y, link, offset, None)
}

/// As [`fit_glm_irls`], starting the Newton iterations from `init`.
pub(crate) fn fit_glm_warm<C: AsRef<[f64]>>(
    design: &[C],
    y: &[f64],
    link: Link,
    offset: Option<&[f64]>,
    init: Option<&[f64]>,
) -> Result<GlmFit> {
    let n = y.len();
    if design.iter().any(|c| c.as_ref().len() != n) || offset.is_some_and(|o| o.len() != n) {
        return Err(ApsError::Contract("design and response lengths differ".into()));
    }
    if link == Link::Logit && y.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(ApsError::Contract(
            "logit-link response must lie in [0, 1]".into(),
        ));
    }
    let k = design.len();
    let all: Vec<&[f64]> = design.iter().map(|c| c.as_ref()).collect();
    let keep = non_aliased(&gram(&all, None), k);
    if keep.iter().any(|k| !k) {
        log::warn!(
            "dropping aliased design columns {:?}",
            keep.iter()
                .enumerate()
                .filter(|(_, k)| !**k)
                .map(|(j, _)| j)
                .collect::<Vec<_>>()
        );
    }
    let cols: Vec<&[f64]> = all
        .iter()
        .zip(&keep)
        .filter(|(_, k)| **k)
        .map(|(c, _)| *c)
        .collect();
    let kk = cols.len();
    let mut beta: Vec<f64> = match init {
        Some(b) if b.len() == k => b
            .iter()
            .zip(&keep)
            .filter(|(_, k)| **k)
            .map(|(b, _)| if b.is_finite() { *b } else { 0.0 })
            .collect(),
        _ => vec![0.0; kk],
    };

    let (beta, iterations, converged, fitted) = match link {
        Link::Identity => {
            let target: Vec<f64> = match offset {
                Some(o) => y.iter().zip(o).map(|(y, o)| y - o).collect(),
                None => y.to_vec(),
            };
            let beta = if kk == 0 {
                Vec::new()
            } else {
                let g = gram(&cols, None);
                let rhs: Vec<f64> = cols.iter().map(|c| crate::linalg::dot(c, &target)).collect();
                cholesky_solve(&g, &rhs, kk)
                    .ok_or_else(|| ApsError::Numerical("singular least-squares system".into()))?
            };
            let fitted = linear_predictor(&cols, &beta, offset, n);
            (beta, 1, true, fitted)
        }
        Link::Logit => {
            let eta = linear_predictor(&cols, &beta, offset, n);
            let mut mu: Vec<f64> = eta.iter().map(|&e| expit(e)).collect();
            let mut ll = binomial_loglik(y, &mu);
            let mut converged = false;
            let mut iterations = 0;
            loop {
                let resid: Vec<f64> = y.iter().zip(&mu).map(|(y, m)| y - m).collect();
                let score: Vec<f64> = cols.iter().map(|c| crate::linalg::dot(c, &resid)).collect();
                if score.iter().all(|s| s.abs() < SCORE_TOL) {
                    converged = true;
                    break;
                }
                if iterations >= MAX_ITER {
                    break;
                }
                iterations += 1;
                let w: Vec<f64> = mu.iter().map(|m| (m * (1.0 - m)).max(MIN_WEIGHT)).collect();
                let h = gram(&cols, Some(&w));
                let Some(delta) = cholesky_solve(&h, &score, kk) else {
                    break;
                };
                let mut step = 1.0;
                let mut accepted = false;
                for _ in 0..30 {
                    let trial: Vec<f64> =
                        beta.iter().zip(&delta).map(|(b, d)| b + step * d).collect();
                    let eta_t = linear_predictor(&cols, &trial, offset, n);
                    let mu_t: Vec<f64> = eta_t.iter().map(|&e| expit(e)).collect();
                    let ll_t = binomial_loglik(y, &mu_t);
                    if ll_t.is_finite() && ll_t >= ll - 1e-12 * ll.abs().max(1.0) {
                        beta = trial;
                        mu = mu_t;
                        ll = ll_t;
                        accepted = true;
                        break;
                    }
                    step *= 0.5;
                }
                if !accepted {
                    break;
                }
            }
            (beta, iterations, converged, mu)
        }
    };

    let mut coefficients = vec![0.0; k];
    let mut it = beta.into_iter();
    for (c, kept) in coefficients.iter_mut().zip(&keep) {
        if *kept {
            *c = it.next().unwrap_or(0.0);
        }
    }
    Ok(GlmFit {
        coefficients,
        aliased: keep.iter().map(|k| !k).collect(),
        iterations,
        converged,
        fitted,
    })
}
