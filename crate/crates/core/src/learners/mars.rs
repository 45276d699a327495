//! Multivariate adaptive regression splines.
//!
//! Forward pass: greedily add reflected hinge pairs `B(x)(x-t)+`,
//! `B(x)(t-x)+` that most reduce the residual sum of squares, scanning all
//! knots of one (parent, variable) combination in a single sorted sweep.
//! Backward pass: drop terms one at a time by least RSS increase and keep
//! the subset with the lowest generalized cross-validation score. Logit
//! fits refit the kept basis by IRLS.

use serde::{Deserialize, Serialize};

use super::glm::fit_glm_irls;
use super::{response, Hyperparams, Link, Role, Var};
use crate::data::TrialDataset;
use crate::error::{ApsError, Result};
use crate::linalg::{cholesky_solve, dot, gram};

const MIN_RSQ_GAIN: f64 = 0.001;
const MAX_RSQ: f64 = 0.999;
const INDEPENDENCE_TOL: f64 = 1e-9;
const SPAN_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hinge {
    pub var: Var,
    pub knot: f64,
    /// `true` for `(x - knot)+`, `false` for `(knot - x)+`.
    pub positive: bool,
}

impl Hinge {
    #[inline]
    fn eval(&self, x: f64) -> f64 {
        let d = if self.positive { x - self.knot } else { self.knot - x };
        d.max(0.0)
    }
}

/// A fitted MARS model. Each basis function is a product of hinges; the
/// empty product is the intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarsModel {
    pub basis: Vec<Vec<Hinge>>,
    pub coefficients: Vec<f64>,
    pub link: Link,
}

impl MarsModel {
    pub fn linear_predictor(&self, data: &TrialDataset, set_treatment: Option<u8>) -> Vec<f64> {
        (0..data.n())
            .map(|i| {
                self.basis
                    .iter()
                    .zip(&self.coefficients)
                    .map(|(h, &b)| {
                        b * h
                            .iter()
                            .map(|h| h.eval(h.var.value(data, i, set_treatment)))
                            .product::<f64>()
                    })
                    .sum()
            })
            .collect()
    }
}

fn endspan(p: usize) -> usize {
    (3.0 - (SPAN_ALPHA / p as f64).log2()).round().max(1.0) as usize
}

fn minspan(p: usize, nz: usize) -> usize {
    let v = -(-(1.0 / (p as f64 * nz as f64)) * (1.0 - SPAN_ALPHA).ln()).log2() / 2.5;
    v.round().max(1.0) as usize
}

/// Removes the components of `c` along the orthonormal columns `q`
/// (two passes of modified Gram-Schmidt).
fn orthogonalize(c: &mut [f64], q: &[Vec<f64>]) {
    for _ in 0..2 {
        for qk in q {
            let d = dot(qk, c);
            for (v, w) in c.iter_mut().zip(qk) {
                *v -= d * w;
            }
        }
    }
}

struct Forward<'a> {
    vars: &'a [Var],
    x: Vec<Vec<f64>>,
    /// Rows sorted by descending value, per variable.
    order: Vec<Vec<usize>>,
    basis: Vec<Vec<Hinge>>,
    cols: Vec<Vec<f64>>,
    q: Vec<Vec<f64>>,
    r: Vec<f64>,
}

struct Candidate {
    parent: usize,
    var: usize,
    knot: f64,
    reduction: f64,
}

impl<'a> Forward<'a> {
    fn new(data: &TrialDataset, vars: &'a [Var], y: &'a [f64]) -> Self {
        let n = y.len();
        let x: Vec<Vec<f64>> = vars.iter().map(|v| v.column(data, None)).collect();
        let order = x
            .iter()
            .map(|col| {
                let mut idx: Vec<usize> = (0..n).collect();
                idx.sort_by(|&a, &b| col[b].total_cmp(&col[a]).then(a.cmp(&b)));
                idx
            })
            .collect();
        let one = vec![1.0; n];
        let norm = (n as f64).sqrt();
        let q0: Vec<f64> = one.iter().map(|v| v / norm).collect();
        let ybar = y.iter().sum::<f64>() / n as f64;
        Self {
            vars,
            x,
            order,
            basis: vec![Vec::new()],
            cols: vec![one],
            q: vec![q0],
            r: y.iter().map(|v| v - ybar).collect(),
        }
    }

    /// Best knot for hinge pairs on `parent` x `var`, if any.
    fn sweep(&self, parent: usize, v: usize) -> Option<Candidate> {
        let b = &self.cols[parent];
        let x = &self.x[v];
        let rows: Vec<usize> = self.order[v].iter().copied().filter(|&i| b[i] != 0.0).collect();
        let nz = rows.len();
        if nz < 2 {
            return None;
        }

        // linear direction B*x, orthogonalized against the current model
        let mut u: Vec<f64> = b.iter().zip(x).map(|(b, x)| b * x).collect();
        let u_norm0 = dot(&u, &u);
        orthogonalize(&mut u, &self.q);
        let u_norm = dot(&u, &u);
        let has_u = u_norm > INDEPENDENCE_TOL * u_norm0 && u_norm > 0.0;
        if has_u {
            let s = u_norm.sqrt();
            u.iter_mut().for_each(|v| *v /= s);
        }
        let ru = if has_u { dot(&self.r, &u) } else { 0.0 };

        // allowed knots by position in ascending order
        let p = self.vars.len();
        let es = endspan(p);
        let ms = minspan(p, nz);
        let mut allowed = vec![false; nz];
        // rows is descending, so ascending position k maps to rows[nz-1-k]
        allowed[nz - 1] = true;
        let mut k = es;
        while k + es < nz {
            allowed[nz - 1 - k] = true;
            k += ms;
        }

        let centre = rows.iter().map(|&i| x[i]).sum::<f64>() / nz as f64;
        let m = self.q.len();
        let mut zs: Vec<&[f64]> = Vec::with_capacity(m + 2);
        zs.push(&self.r);
        zs.extend(self.q.iter().map(|q| q.as_slice()));
        if has_u {
            zs.push(&u);
        }
        let nzv = zs.len();
        let mut sx = vec![0.0; nzv];
        let mut s1 = vec![0.0; nzv];
        let (mut b2x2, mut b2x, mut b2) = (0.0, 0.0, 0.0);

        let mut best: Option<Candidate> = None;
        let mut pos = 0;
        while pos < nz {
            let t = x[rows[pos]];
            let mut end = pos;
            let mut ok = false;
            while end < nz && x[rows[end]] == t {
                ok |= allowed[end];
                end += 1;
            }
            if ok && pos > 0 {
                let tc = t - centre;
                let norm = b2x2 - 2.0 * tc * b2x + tc * tc * b2;
                let dots: Vec<f64> = (0..nzv).map(|j| sx[j] - tc * s1[j]).collect();
                let cr = dots[0];
                let mut den = norm;
                for d in &dots[1..] {
                    den -= d * d;
                }
                let mut reduction = ru * ru;
                if norm > 0.0 && den > INDEPENDENCE_TOL * norm {
                    let cu = if has_u { dots[nzv - 1] } else { 0.0 };
                    let num = cr - ru * cu;
                    reduction += num * num / den;
                }
                if best.as_ref().map_or(true, |c| reduction > c.reduction) {
                    best = Some(Candidate {
                        parent,
                        var: v,
                        knot: t,
                        reduction,
                    });
                }
            }
            for &i in &rows[pos..end] {
                let bi = b[i];
                let xc = x[i] - centre;
                for (j, z) in zs.iter().enumerate() {
                    let w = bi * z[i];
                    sx[j] += w * xc;
                    s1[j] += w;
                }
                b2x2 += bi * bi * xc * xc;
                b2x += bi * bi * xc;
                b2 += bi * bi;
            }
            pos = end;
        }
        // the smallest value is always a candidate knot: the pair reduces
        // to the linear term
        if has_u && best.as_ref().map_or(true, |c| ru * ru > c.reduction) {
            best = Some(Candidate {
                parent,
                var: v,
                knot: x[rows[nz - 1]],
                reduction: ru * ru,
            });
        }
        best
    }

    /// Adds the hinge pair of `c`, skipping columns dependent on the model.
    fn add(&mut self, c: &Candidate) -> usize {
        let mut added = 0;
        for positive in [true, false] {
            let hinge = Hinge {
                var: self.vars[c.var],
                knot: c.knot,
                positive,
            };
            let col: Vec<f64> = self.cols[c.parent]
                .iter()
                .zip(&self.x[c.var])
                .map(|(b, &x)| b * hinge.eval(x))
                .collect();
            let mut o = col.clone();
            let n0 = dot(&o, &o);
            if n0 == 0.0 {
                continue;
            }
            orthogonalize(&mut o, &self.q);
            let n1 = dot(&o, &o);
            if n1 <= INDEPENDENCE_TOL * n0 {
                continue;
            }
            let s = n1.sqrt();
            o.iter_mut().for_each(|v| *v /= s);
            let d = dot(&self.r, &o);
            for (r, q) in self.r.iter_mut().zip(&o) {
                *r -= d * q;
            }
            let mut h = self.basis[c.parent].clone();
            h.push(hinge);
            self.basis.push(h);
            self.cols.push(col);
            self.q.push(o);
            added += 1;
        }
        added
    }

    fn run(&mut self, hyper: &Hyperparams) -> usize {
        let tss = dot(&self.r, &self.r);
        if tss <= 0.0 {
            return 0;
        }
        let mut steps = 0;
        while self.basis.len() + 2 <= hyper.mars_max_terms.max(1) {
            let rss = dot(&self.r, &self.r);
            if 1.0 - rss / tss >= MAX_RSQ {
                break;
            }
            let mut best: Option<Candidate> = None;
            for parent in 0..self.basis.len() {
                if self.basis[parent].len() >= hyper.mars_degree {
                    continue;
                }
                for v in 0..self.vars.len() {
                    if self.basis[parent].iter().any(|h| h.var == self.vars[v]) {
                        continue;
                    }
                    if let Some(c) = self.sweep(parent, v) {
                        if best.as_ref().map_or(true, |b| c.reduction > b.reduction) {
                            best = Some(c);
                        }
                    }
                }
            }
            let Some(c) = best else { break };
            if c.reduction / tss < MIN_RSQ_GAIN {
                break;
            }
            if self.add(&c) == 0 {
                break;
            }
            steps += 1;
        }
        steps
    }
}

fn subset_rss(g: &[f64], xy: &[f64], yy: f64, m: usize, keep: &[usize]) -> f64 {
    let k = keep.len();
    let mut gs = vec![0.0; k * k];
    for (a, &i) in keep.iter().enumerate() {
        for (b, &j) in keep.iter().enumerate() {
            gs[a * k + b] = g[i * m + j];
        }
    }
    let rhs: Vec<f64> = keep.iter().map(|&i| xy[i]).collect();
    match cholesky_solve(&gs, &rhs, k) {
        Some(beta) => (yy - dot(&beta, &rhs)).max(0.0),
        None => f64::INFINITY,
    }
}

/// Backward elimination; returns the kept basis indices.
fn prune(cols: &[Vec<f64>], y: &[f64], penalty: f64) -> Vec<usize> {
    let m = cols.len();
    let n = y.len() as f64;
    let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
    let g = gram(&refs, None);
    let xy: Vec<f64> = cols.iter().map(|c| dot(c, y)).collect();
    let yy = dot(y, y);
    let gcv = |rss: f64, terms: usize| {
        let c = terms as f64 + penalty * (terms as f64 - 1.0) / 2.0;
        if c >= n {
            f64::INFINITY
        } else {
            rss / n / (1.0 - c / n).powi(2)
        }
    };
    let mut current: Vec<usize> = (0..m).collect();
    let mut best = (gcv(subset_rss(&g, &xy, yy, m, &current), m), current.clone());
    while current.len() > 1 {
        let mut drop: Option<(usize, f64)> = None;
        for pos in 1..current.len() {
            let trial: Vec<usize> = current
                .iter()
                .enumerate()
                .filter(|(p, _)| *p != pos)
                .map(|(_, &i)| i)
                .collect();
            let rss = subset_rss(&g, &xy, yy, m, &trial);
            if drop.map_or(true, |(_, r)| rss < r) {
                drop = Some((pos, rss));
            }
        }
        let (pos, rss) = drop.expect("at least one removable term");
        current.remove(pos);
        let score = gcv(rss, current.len());
        if score <= best.0 {
            best = (score, current.clone());
        }
    }
    best.1
}

/// Fits MARS on the predictors `vars`. Returns the model, the iteration
/// count and whether the final coefficient fit converged.
pub fn fit_mars(
    data: &TrialDataset,
    role: Role,
    vars: &[Var],
    link: Link,
    hyper: &Hyperparams,
) -> Result<(MarsModel, usize, bool)> {
    if hyper.mars_degree == 0 {
        return Err(ApsError::Contract("MARS degree must be at least 1".into()));
    }
    let y = response(data, role);
    let mut fwd = Forward::new(data, vars, &y);
    let steps = fwd.run(hyper);
    let keep = prune(&fwd.cols, &y, hyper.mars_penalty);
    let basis: Vec<Vec<Hinge>> = keep.iter().map(|&i| fwd.basis[i].clone()).collect();
    let cols: Vec<Vec<f64>> = keep.iter().map(|&i| fwd.cols[i].clone()).collect();
    let fit = fit_glm_irls(&cols, &y, link, None)?;
    Ok((
        MarsModel {
            basis,
            coefficients: fit.coefficients,
            link,
        },
        steps + fit.iterations,
        fit.converged,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::OutcomeKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dataset(w: Vec<f64>, y: Vec<f64>) -> TrialDataset {
        let a = (0..w.len()).map(|i| (i % 2) as u8).collect();
        TrialDataset::new(
            vec!["W1".into()],
            vec![w],
            a,
            y,
            OutcomeKind::Continuous,
            None,
            0.5,
        )
        .unwrap()
    }

    #[test]
    fn knot_sweep_matches_direct_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w: Vec<f64> = (0..120).map(|_| rng.gen::<f64>() * 4.0 - 2.0).collect();
        let y: Vec<f64> = w.iter().map(|&x| 0.3 + 0.2 * (x - 0.5).max(0.0) + 0.05 * rng.gen::<f64>()).collect();
        let d = dataset(w.clone(), y.clone());
        let vars = [Var::Covariate(0)];
        let fwd = Forward::new(&d, &vars, &y);
        let c = fwd.sweep(0, 0).unwrap();
        // direct least squares with intercept plus the chosen pair
        let plus: Vec<f64> = w.iter().map(|x| (x - c.knot).max(0.0)).collect();
        let minus: Vec<f64> = w.iter().map(|x| (c.knot - x).max(0.0)).collect();
        let fit = fit_glm_irls(&[vec![1.0; 120], plus, minus], &y, Link::Identity, None).unwrap();
        let rss: f64 = y.iter().zip(&fit.fitted).map(|(a, b)| (a - b).powi(2)).sum();
        let tss: f64 = dot(&fwd.r, &fwd.r);
        assert!((tss - rss - c.reduction).abs() < 1e-9 * tss);
    }

    #[test]
    fn recovers_single_hinge() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w: Vec<f64> = (0..300).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let truth: Vec<f64> = w.iter().map(|&x| 0.2 + 0.5 * (x - 0.2).max(0.0)).collect();
        let d = dataset(w, truth.clone());
        let vars = [Var::Covariate(0)];
        let (m, _, _) = fit_mars(&d, Role::Outcome, &vars, Link::Identity, &Hyperparams::default()).unwrap();
        let pred = m.linear_predictor(&d, None);
        let mse = pred.iter().zip(&truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 300.0;
        assert!(mse < 1e-3, "mse {mse}");
    }

    #[test]
    fn constant_response_is_intercept_only() {
        let d = dataset(vec![0.1, 0.5, 0.9, 0.3], vec![0.4; 4]);
        let vars = [Var::Covariate(0)];
        let (m, _, _) = fit_mars(&d, Role::Outcome, &vars, Link::Identity, &Hyperparams::default()).unwrap();
        assert_eq!(m.basis.len(), 1);
        assert!((m.coefficients[0] - 0.4).abs() < 1e-12);
    }

    fn gcv_of(cols: &[Vec<f64>], y: &[f64], keep: &[usize], penalty: f64) -> f64 {
        let sub: Vec<Vec<f64>> = keep.iter().map(|&i| cols[i].clone()).collect();
        let fit = fit_glm_irls(&sub, y, Link::Identity, None).unwrap();
        let n = y.len() as f64;
        let rss: f64 = y.iter().zip(&fit.fitted).map(|(a, b)| (a - b).powi(2)).sum();
        let c = keep.len() as f64 + penalty * (keep.len() as f64 - 1.0) / 2.0;
        rss / n / (1.0 - c / n).powi(2)
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]
        #[test]
        fn pruning_never_raises_gcv(seed in 0u64..10_000, noise in 0.01f64..0.5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 150;
            let w: Vec<Vec<f64>> = (0..2).map(|_| (0..n).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect()).collect();
            let y: Vec<f64> = (0..n)
                .map(|i| (w[0][i] - 0.1).max(0.0) - 0.5 * w[1][i] * w[0][i] + noise * (rng.gen::<f64>() - 0.5))
                .collect();
            let d = TrialDataset::new(
                vec!["W1".into(), "W2".into()],
                w,
                (0..n).map(|i| (i % 2) as u8).collect(),
                y.clone(),
                OutcomeKind::Continuous,
                None,
                0.5,
            )
            .unwrap();
            let vars = [Var::Covariate(0), Var::Covariate(1)];
            let hyper = Hyperparams::default();
            let mut fwd = Forward::new(&d, &vars, &y);
            fwd.run(&hyper);
            let keep = prune(&fwd.cols, &y, hyper.mars_penalty);
            let all: Vec<usize> = (0..fwd.cols.len()).collect();
            let pruned = gcv_of(&fwd.cols, &y, &keep, hyper.mars_penalty);
            let unpruned = gcv_of(&fwd.cols, &y, &all, hyper.mars_penalty);
            proptest::prop_assert!(pruned <= unpruned * (1.0 + 1e-9), "{pruned} > {unpruned}");
        }
    }
}
