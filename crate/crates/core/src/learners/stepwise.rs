//! Bidirectional stepwise selection by AIC, starting from the main-terms
//! model. The base terms (intercept, and treatment in the outcome role)
//! are never dropped.
//!
//! Binary responses are scored with the binomial likelihood; responses
//! rescaled from a continuous outcome are scored with a Gaussian working
//! likelihood on the logit-link fitted means. Interaction terms respect
//! marginality: a product enters only when both main effects are present,
//! and a main effect leaves only when no product uses it.

use super::glm::{binomial_loglik, fit_glm_warm, GlmFit};
use super::{base_terms, predictors, response, Link, Role, Term, Var};
use crate::data::TrialDataset;
use crate::error::Result;

/// Minimum AIC improvement required to take a step.
const STEP_TOL: f64 = 1e-7;
const MAX_STEPS: usize = 1000;

fn criterion(y: &[f64], fit: &GlmFit, binary: bool) -> f64 {
    let k = fit.rank() as f64;
    if binary {
        -2.0 * binomial_loglik(y, &fit.fitted) + 2.0 * k
    } else {
        let n = y.len() as f64;
        let rss: f64 = y.iter().zip(&fit.fitted).map(|(y, m)| (y - m).powi(2)).sum();
        n * (rss.max(1e-300) / n).ln() + 2.0 * k
    }
}

fn uses(term: &Term, v: Var) -> bool {
    matches!(*term, Term::Product(a, b) if a == v || b == v)
}

/// Returns the selected terms (base terms first) and their fit.
pub fn fit_stepwise(
    data: &TrialDataset,
    role: Role,
    interactions: bool,
    link: Link,
) -> Result<(Vec<Term>, GlmFit)> {
    let y = response(data, role);
    let binary = y.iter().all(|&v| v == 0.0 || v == 1.0);

    let base = base_terms(role);
    let mut all = base.clone();
    all.extend((0..data.n_covariates()).map(|j| Term::Main(Var::Covariate(j))));
    if interactions {
        let vars = predictors(data, role);
        for (i, &u) in vars.iter().enumerate() {
            for &v in &vars[i + 1..] {
                all.push(Term::Product(u, v));
            }
        }
    }
    let columns: Vec<Vec<f64>> = all.iter().map(|t| t.column(data, None)).collect();
    let n_base = base.len();

    let fit_model = |model: &[usize], init: Option<&[f64]>| -> Result<GlmFit> {
        let cols: Vec<&[f64]> = model.iter().map(|&i| columns[i].as_slice()).collect();
        fit_glm_warm(&cols, &y, link, None, init)
    };

    let mut model: Vec<usize> = (0..n_base + data.n_covariates()).collect();
    let mut fit = fit_model(&model, None)?;
    let mut score = criterion(&y, &fit, binary);

    for _ in 0..MAX_STEPS {
        let present = |t: Term| model.iter().any(|&i| all[i] == t);
        let mut best: Option<(f64, Vec<usize>, GlmFit)> = None;

        // drops
        for pos in n_base..model.len() {
            let term = all[model[pos]];
            if let Term::Main(v) = term {
                if model.iter().any(|&i| uses(&all[i], v)) {
                    continue;
                }
            }
            let mut cand = model.clone();
            cand.remove(pos);
            let mut init = fit.coefficients.clone();
            init.remove(pos);
            let f = fit_model(&cand, Some(&init))?;
            let s = criterion(&y, &f, binary);
            if best.as_ref().map_or(true, |b| s < b.0) {
                best = Some((s, cand, f));
            }
        }
        // adds
        for (idx, term) in all.iter().enumerate().skip(n_base) {
            if model.contains(&idx) {
                continue;
            }
            if let Term::Product(u, v) = *term {
                let main_ok = |w: Var| (w == Var::Treatment && role == Role::Outcome) || present(Term::Main(w));
                if !(main_ok(u) && main_ok(v)) {
                    continue;
                }
            }
            let mut cand = model.clone();
            cand.push(idx);
            let mut init = fit.coefficients.clone();
            init.push(0.0);
            let f = fit_model(&cand, Some(&init))?;
            let s = criterion(&y, &f, binary);
            if best.as_ref().map_or(true, |b| s < b.0) {
                best = Some((s, cand, f));
            }
        }
        match best {
            Some((s, cand, f)) if s < score - STEP_TOL => {
                model = cand;
                fit = f;
                score = s;
            }
            _ => break,
        }
    }
    Ok((model.iter().map(|&i| all[i]).collect(), fit))
}
