//! Small dense helpers for the normal equations that every learner solves.
//!
//! Design matrices are stored column-major as `Vec<Vec<f64>>`, one inner
//! vector per column. Problem sizes here are tiny (tens of columns), so a
//! hand-rolled Cholesky is all that is needed.

/// Relative pivot threshold below which a column is considered aliased.
pub(crate) const ALIAS_TOL: f64 = 1e-10;

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn weighted_dot(a: &[f64], b: &[f64], w: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(w)
        .map(|((x, y), w)| x * y * w)
        .sum()
}

/// Packed symmetric matrix `XᵀWX` (row-major, full storage).
pub(crate) fn gram(columns: &[&[f64]], weights: Option<&[f64]>) -> Vec<f64> {
    let k = columns.len();
    let mut g = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..=i {
            let v = match weights {
                Some(w) => weighted_dot(columns[i], columns[j], w),
                None => dot(columns[i], columns[j]),
            };
            g[i * k + j] = v;
            g[j * k + i] = v;
        }
    }
    g
}

/// Left-to-right pivot screen on a Gram matrix: a column is kept only when
/// its residual after projection on the previously kept columns is
/// non-negligible relative to its own norm.
pub(crate) fn non_aliased(g: &[f64], k: usize) -> Vec<bool> {
    let mut keep = vec![false; k];
    let mut kept: Vec<usize> = Vec::with_capacity(k);
    // rows of L for kept columns, indexed by position in `kept`
    let mut l: Vec<Vec<f64>> = Vec::with_capacity(k);
    for j in 0..k {
        let gjj = g[j * k + j];
        if gjj <= 0.0 || !gjj.is_finite() {
            continue;
        }
        let mut row = Vec::with_capacity(kept.len() + 1);
        for (p, &c) in kept.iter().enumerate() {
            let mut s = g[j * k + c];
            for q in 0..p {
                s -= row[q] * l[p][q];
            }
            row.push(s / l[p][p]);
        }
        let d = gjj - row.iter().map(|v| v * v).sum::<f64>();
        if d > ALIAS_TOL * gjj {
            row.push(d.sqrt());
            l.push(row);
            kept.push(j);
            keep[j] = true;
        }
    }
    keep
}

/// Solves `G x = b` for symmetric positive definite `G` (k×k, row-major).
/// Returns `None` when `G` is not numerically positive definite.
pub(crate) fn cholesky_solve(g: &[f64], b: &[f64], k: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..=i {
            let mut s = g[i * k + j];
            for p in 0..j {
                s -= l[i * k + p] * l[j * k + p];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return None;
                }
                l[i * k + i] = s.sqrt();
            } else {
                l[i * k + j] = s / l[j * k + j];
            }
        }
    }
    let mut y = vec![0.0; k];
    for i in 0..k {
        let mut s = b[i];
        for p in 0..i {
            s -= l[i * k + p] * y[p];
        }
        y[i] = s / l[i * k + i];
    }
    let mut x = vec![0.0; k];
    for i in (0..k).rev() {
        let mut s = y[i];
        for p in i + 1..k {
            s -= l[p * k + i] * x[p];
        }
        x[i] = s / l[i * k + i];
    }
    Some(x)
}

pub(crate) fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample variance with the `n - 1` denominator.
pub(crate) fn sample_variance(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64
}

pub(crate) fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}
