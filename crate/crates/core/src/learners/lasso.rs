//! L1-penalized regression by cyclic coordinate descent.
//!
//! The objective is `-(1/n) loglik + λ Σ|β_j|` for the logit link and
//! `(1/2n) RSS + λ Σ|β_j|` for the identity link, over internally
//! standardized columns (mean 0, variance 1 with the `1/n` convention).
//! Logit fits wrap the coordinate descent in an IRLS outer loop. The
//! penalty level is picked by K-fold cross-validated deviance over a
//! log-spaced grid.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::glm::fit_glm_irls;
use super::{base_terms, response, Hyperparams, Link, Role, Term, Var};
use crate::data::TrialDataset;
use crate::error::{ApsError, Result};
use crate::linalg::{dot, expit};

const INNER_TOL: f64 = 1e-16;
const OUTER_TOL: f64 = 1e-9;
const MAX_SWEEPS: usize = 10_000;
const MAX_OUTER: usize = 100;
const MIN_WEIGHT: f64 = 1e-5;

/// A LASSO fit on the original covariate scale.
#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit {
    pub terms: Vec<Term>,
    pub coefficients: Vec<f64>,
    pub lambda: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn soft_threshold(g: f64, lambda: f64) -> f64 {
    if g > lambda {
        g - lambda
    } else if g < -lambda {
        g + lambda
    } else {
        0.0
    }
}

/// Standardized penalized-regression problem. The intercept is implicit
/// and never penalized.
struct Problem<'a> {
    x: Vec<Vec<f64>>,
    means: Vec<f64>,
    sds: Vec<f64>,
    active: Vec<bool>,
    penalized: Vec<bool>,
    y: &'a [f64],
    link: Link,
}

#[derive(Debug, Clone)]
struct State {
    b0: f64,
    beta: Vec<f64>,
}

impl<'a> Problem<'a> {
    fn new(raw: &[&[f64]], y: &'a [f64], link: Link, penalized: &[bool]) -> Self {
        let n = y.len() as f64;
        let mut x = Vec::with_capacity(raw.len());
        let mut means = Vec::with_capacity(raw.len());
        let mut sds = Vec::with_capacity(raw.len());
        let mut active = Vec::with_capacity(raw.len());
        for col in raw {
            let m = col.iter().sum::<f64>() / n;
            let sd = (col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
            let ok = sd > 1e-12 * m.abs().max(1.0);
            let sd = if ok { sd } else { 1.0 };
            x.push(col.iter().map(|v| (v - m) / sd).collect());
            means.push(m);
            sds.push(sd);
            active.push(ok);
        }
        Self {
            x,
            means,
            sds,
            active,
            penalized: penalized.to_vec(),
            y,
            link,
        }
    }

    fn n(&self) -> usize {
        self.y.len()
    }

    fn eta(&self, s: &State) -> Vec<f64> {
        let mut eta = vec![s.b0; self.n()];
        for (col, &b) in self.x.iter().zip(&s.beta) {
            if b != 0.0 {
                for (e, v) in eta.iter_mut().zip(col) {
                    *e += b * v;
                }
            }
        }
        eta
    }

    /// Unpenalized fit of the intercept and unpenalized columns.
    fn null_state(&self) -> Result<State> {
        let n = self.n();
        let idx: Vec<usize> = (0..self.x.len())
            .filter(|&j| self.active[j] && !self.penalized[j])
            .collect();
        let mut design = vec![vec![1.0; n]];
        design.extend(idx.iter().map(|&j| self.x[j].clone()));
        let fit = fit_glm_irls(&design, self.y, self.link, None)?;
        let mut beta = vec![0.0; self.x.len()];
        for (k, &j) in idx.iter().enumerate() {
            beta[j] = fit.coefficients[k + 1];
        }
        Ok(State {
            b0: fit.coefficients[0],
            beta,
        })
    }

    fn lambda_max(&self, null: &State) -> f64 {
        let mu = self.mean(&self.eta(null));
        let r: Vec<f64> = self.y.iter().zip(&mu).map(|(y, m)| y - m).collect();
        let n = self.n() as f64;
        (0..self.x.len())
            .filter(|&j| self.active[j] && self.penalized[j])
            .map(|j| dot(&self.x[j], &r).abs() / n)
            .fold(0.0, f64::max)
    }

    fn mean(&self, eta: &[f64]) -> Vec<f64> {
        match self.link {
            Link::Logit => eta.iter().map(|&e| expit(e)).collect(),
            Link::Identity => eta.to_vec(),
        }
    }

    /// Coordinate descent on `(1/2n) Σ w r² + λ|β|₁`, updating `r` in place.
    fn cd(&self, s: &mut State, w: &[f64], r: &mut [f64], lambda: f64) -> (usize, bool) {
        let n = self.n() as f64;
        let sw: f64 = w.iter().sum();
        let xw2: Vec<f64> = self
            .x
            .iter()
            .map(|c| c.iter().zip(w).map(|(v, w)| w * v * v).sum::<f64>() / n)
            .collect();
        for sweep in 1..=MAX_SWEEPS {
            let mut maxd: f64 = 0.0;
            let d0 = r.iter().zip(w).map(|(r, w)| r * w).sum::<f64>() / sw;
            if d0 != 0.0 {
                s.b0 += d0;
                r.iter_mut().for_each(|v| *v -= d0);
                maxd = maxd.max(sw / n * d0 * d0);
            }
            for j in 0..self.x.len() {
                if !self.active[j] || xw2[j] <= 0.0 {
                    continue;
                }
                let col = &self.x[j];
                let g = col
                    .iter()
                    .zip(w.iter().zip(r.iter()))
                    .map(|(x, (w, r))| x * w * r)
                    .sum::<f64>()
                    / n
                    + xw2[j] * s.beta[j];
                let new = if self.penalized[j] {
                    soft_threshold(g, lambda) / xw2[j]
                } else {
                    g / xw2[j]
                };
                let d = new - s.beta[j];
                if d != 0.0 {
                    for (rv, x) in r.iter_mut().zip(col) {
                        *rv -= d * x;
                    }
                    s.beta[j] = new;
                    maxd = maxd.max(xw2[j] * d * d);
                }
            }
            if maxd < INNER_TOL {
                return (sweep, true);
            }
        }
        (MAX_SWEEPS, false)
    }

    /// Minimizes the penalized objective at `lambda`, warm-started from `s`.
    fn solve(&self, s: &mut State, lambda: f64) -> (usize, bool) {
        let n = self.n();
        match self.link {
            Link::Identity => {
                let eta = self.eta(s);
                let mut r: Vec<f64> = self.y.iter().zip(&eta).map(|(y, e)| y - e).collect();
                self.cd(s, &vec![1.0; n], &mut r, lambda)
            }
            Link::Logit => {
                let mut sweeps = 0;
                for _ in 0..MAX_OUTER {
                    let eta = self.eta(s);
                    let mu: Vec<f64> = eta.iter().map(|&e| expit(e)).collect();
                    let w: Vec<f64> = mu.iter().map(|m| (m * (1.0 - m)).max(MIN_WEIGHT)).collect();
                    let mut r: Vec<f64> = self
                        .y
                        .iter()
                        .zip(&mu)
                        .zip(&w)
                        .map(|((y, m), w)| (y - m) / w)
                        .collect();
                    let old = s.clone();
                    let (k, _) = self.cd(s, &w, &mut r, lambda);
                    sweeps += k;
                    let change = old
                        .beta
                        .iter()
                        .zip(&s.beta)
                        .map(|(a, b)| (a - b).abs())
                        .fold((old.b0 - s.b0).abs(), f64::max);
                    if !change.is_finite() {
                        return (sweeps, false);
                    }
                    if change < OUTER_TOL {
                        return (sweeps, true);
                    }
                }
                (sweeps, false)
            }
        }
    }

    /// Coefficients `[intercept, β_1, ...]` on the original column scale.
    fn unstandardize(&self, s: &State) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.x.len() + 1);
        let mut b0 = s.b0;
        for j in 0..self.x.len() {
            let b = if self.active[j] { s.beta[j] / self.sds[j] } else { 0.0 };
            b0 -= b * self.means[j];
            out.push(b);
        }
        out.insert(0, b0);
        out
    }

    fn grid(&self, lmax: f64, len: usize) -> Vec<f64> {
        let ratio: f64 = if self.n() > self.x.len() { 1e-4 } else { 1e-2 };
        if len == 1 {
            return vec![lmax];
        }
        (0..len)
            .map(|k| lmax * ratio.powf(k as f64 / (len - 1) as f64))
            .collect()
    }

    /// Solutions along `lambdas` (decreasing), warm-started.
    fn path(&self, lambdas: &[f64], lmax: f64) -> Result<(Vec<State>, usize, bool)> {
        let mut s = self.null_state()?;
        let mut out = Vec::with_capacity(lambdas.len());
        let mut sweeps = 0;
        let mut converged = true;
        for &lambda in lambdas {
            if lambda < lmax {
                let (k, ok) = self.solve(&mut s, lambda);
                sweeps += k;
                converged &= ok;
            }
            out.push(s.clone());
        }
        Ok((out, sweeps, converged))
    }
}

fn check_inputs(x: &[Vec<f64>], y: &[f64], penalized: &[bool]) -> Result<()> {
    if x.len() != penalized.len() || x.iter().any(|c| c.len() != y.len()) {
        return Err(ApsError::Contract("inconsistent LASSO inputs".into()));
    }
    Ok(())
}

/// Smallest penalty at which every penalized coefficient is zero.
pub fn lambda_max(x: &[Vec<f64>], y: &[f64], link: Link, penalized: &[bool]) -> Result<f64> {
    check_inputs(x, y, penalized)?;
    let cols: Vec<&[f64]> = x.iter().map(|c| c.as_slice()).collect();
    let prob = Problem::new(&cols, y, link, penalized);
    Ok(prob.lambda_max(&prob.null_state()?))
}

/// Penalized fit at a fixed `lambda`. Returns `[intercept, β_1, ...]` on
/// the original scale.
pub fn lasso_at_lambda(
    x: &[Vec<f64>],
    y: &[f64],
    link: Link,
    penalized: &[bool],
    lambda: f64,
) -> Result<Vec<f64>> {
    check_inputs(x, y, penalized)?;
    let cols: Vec<&[f64]> = x.iter().map(|c| c.as_slice()).collect();
    let prob = Problem::new(&cols, y, link, penalized);
    let mut s = prob.null_state()?;
    if lambda < prob.lambda_max(&s) {
        prob.solve(&mut s, lambda);
    }
    Ok(prob.unstandardize(&s))
}

fn held_out_loss(link: Link, y: &[f64], eta: &[f64]) -> f64 {
    match link {
        Link::Identity => y.iter().zip(eta).map(|(y, e)| (y - e).powi(2)).sum(),
        Link::Logit => y
            .iter()
            .zip(eta)
            .map(|(&y, &e)| {
                let m = expit(e).clamp(1e-15, 1.0 - 1e-15);
                -2.0 * (y * m.ln() + (1.0 - y) * (1.0 - m).ln())
            })
            .sum(),
    }
}

/// LASSO learner: treatment unpenalized in the outcome role, penalty chosen
/// by internal cross-validation (folds drawn from `seed`).
pub fn fit_lasso(
    data: &TrialDataset,
    role: Role,
    link: Link,
    hyper: &Hyperparams,
    seed: u64,
) -> Result<LassoFit> {
    let y = response(data, role);
    let n = y.len();
    let mut raw: Vec<&[f64]> = Vec::new();
    let mut penalized = Vec::new();
    let a_col: Vec<f64>;
    if role == Role::Outcome {
        a_col = data.treatment().iter().map(|&a| a as f64).collect();
        raw.push(&a_col);
        penalized.push(false);
    }
    for j in 0..data.n_covariates() {
        raw.push(data.covariate(j));
        penalized.push(true);
    }
    let mut terms = base_terms(role);
    terms.extend((0..data.n_covariates()).map(|j| Term::Main(Var::Covariate(j))));

    let full = Problem::new(&raw, &y, link, &penalized);
    let null = full.null_state()?;
    let lmax = full.lambda_max(&null);
    if lmax <= 0.0 || !full.active.iter().zip(&penalized).any(|(a, p)| *a && *p) {
        let coefficients = full.unstandardize(&null);
        return Ok(LassoFit {
            terms,
            coefficients,
            lambda: lmax,
            iterations: 0,
            converged: true,
        });
    }
    let lambdas = full.grid(lmax, hyper.lasso_lambdas.max(1));

    // cross-validated deviance over the grid
    let k = hyper.lasso_folds.clamp(2, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold_of = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % k;
    }
    let mut loss = vec![0.0; lambdas.len()];
    for v in 0..k {
        let train: Vec<usize> = (0..n).filter(|&i| fold_of[i] != v).collect();
        let valid: Vec<usize> = (0..n).filter(|&i| fold_of[i] == v).collect();
        let pick = |c: &[f64], idx: &[usize]| idx.iter().map(|&i| c[i]).collect::<Vec<_>>();
        let tr_x: Vec<Vec<f64>> = raw.iter().map(|c| pick(c, &train)).collect();
        let tr_cols: Vec<&[f64]> = tr_x.iter().map(|c| c.as_slice()).collect();
        let tr_y = pick(&y, &train);
        let va_x: Vec<Vec<f64>> = raw.iter().map(|c| pick(c, &valid)).collect();
        let va_y = pick(&y, &valid);
        let prob = Problem::new(&tr_cols, &tr_y, link, &penalized);
        let tr_lmax = prob.lambda_max(&prob.null_state()?);
        let (states, _, _) = prob.path(&lambdas, tr_lmax)?;
        for (l, s) in states.iter().enumerate() {
            let coef = prob.unstandardize(s);
            let mut eta = vec![coef[0]; valid.len()];
            for (col, b) in va_x.iter().zip(&coef[1..]) {
                for (e, x) in eta.iter_mut().zip(col) {
                    *e += b * x;
                }
            }
            loss[l] += held_out_loss(link, &va_y, &eta);
        }
    }
    let best = loss
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (l, &v)| if v < acc.1 { (l, v) } else { acc })
        .0;

    let (states, sweeps, converged) = full.path(&lambdas[..=best], lmax)?;
    let coefficients = full.unstandardize(states.last().expect("non-empty path"));
    Ok(LassoFit {
        terms,
        coefficients,
        lambda: lambdas[best],
        iterations: sweeps,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::logit;
    use rand::{Rng, SeedableRng};

    fn standardized(v: &[f64]) -> Vec<f64> {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt();
        v.iter().map(|x| (x - m) / sd).collect()
    }

    #[test]
    fn soft_threshold_oracle_single_covariate() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = standardized(&(0..60).map(|_| rng.gen::<f64>()).collect::<Vec<_>>());
        let y: Vec<f64> = x.iter().map(|v| 0.7 * v + rng.gen::<f64>() - 0.5 + 2.0).collect();
        let n = y.len() as f64;
        let ols = dot(&x, &y) / n;
        for lambda in [0.05, 0.3, 0.6, 1.5] {
            let coef = lasso_at_lambda(&[x.clone()], &y, Link::Identity, &[true], lambda).unwrap();
            let expected = soft_threshold(ols, lambda);
            assert!((coef[1] - expected).abs() < 1e-8, "λ={lambda}: {} vs {expected}", coef[1]);
        }
    }

    #[test]
    fn zero_penalty_orthonormal_design_is_ols() {
        // columns with mean 0 and unit 1/n variance, mutually orthogonal
        let x1 = vec![1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0];
        let x2 = vec![1.0, 1.0, -1.0, -1.0, 1.0, 1.0, -1.0, -1.0];
        let y = vec![3.0, 1.5, 0.2, -0.7, 2.2, 0.9, 0.1, -1.3];
        let n = y.len() as f64;
        let coef =
            lasso_at_lambda(&[x1.clone(), x2.clone()], &y, Link::Identity, &[true, true], 0.0).unwrap();
        assert!((coef[0] - y.iter().sum::<f64>() / n).abs() < 1e-8);
        assert!((coef[1] - dot(&x1, &y) / n).abs() < 1e-8);
        assert!((coef[2] - dot(&x2, &y) / n).abs() < 1e-8);
    }

    #[test]
    fn full_shrinkage_at_lambda_max() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<Vec<f64>> = (0..3).map(|_| (0..80).map(|_| rng.gen::<f64>()).collect()).collect();
        let y: Vec<f64> = (0..80).map(|i| (x[0][i] + rng.gen::<f64>() > 1.0) as u8 as f64).collect();
        let pen = [true, true, true];
        let lmax = lambda_max(&x, &y, Link::Logit, &pen).unwrap();
        let coef = lasso_at_lambda(&x, &y, Link::Logit, &pen, lmax).unwrap();
        assert!(coef[1..].iter().all(|&b| b == 0.0));
        let ybar = y.iter().sum::<f64>() / 80.0;
        assert!((coef[0] - logit(ybar)).abs() < 1e-8);
        let just_below = lasso_at_lambda(&x, &y, Link::Logit, &pen, 0.9 * lmax).unwrap();
        assert!(just_below[1..].iter().any(|&b| b != 0.0));
    }
}
