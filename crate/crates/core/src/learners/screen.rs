//! Marginal correlation screening of covariates.

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{ApsError, Result};

/// Indices of covariates whose Pearson correlation with `y` has a
/// two-sided p-value below `alpha`. Falls back to the single most
/// correlated covariate when none pass; constant covariates never pass.
pub fn screen_correlation(covariates: &[Vec<f64>], y: &[f64], alpha: f64) -> Result<Vec<usize>> {
    let n = y.len();
    if n < 3 {
        return Err(ApsError::Contract("screening needs at least 3 rows".into()));
    }
    if covariates.iter().any(|c| c.len() != n) {
        return Err(ApsError::Contract("covariate and response lengths differ".into()));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n as f64;
    let my = mean(y);
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let df = (n - 2) as f64;
    let t_dist = StudentsT::new(0.0, 1.0, df).map_err(|e| ApsError::Numerical(e.to_string()))?;

    let mut scored: Vec<(usize, f64, f64)> = Vec::new();
    for (j, x) in covariates.iter().enumerate() {
        let mx = mean(x);
        let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
        if sxx <= 1e-24 * (1.0 + mx * mx) * n as f64 || syy <= 0.0 {
            continue;
        }
        let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
        let p = if r.abs() >= 1.0 {
            0.0
        } else {
            let t = r * (df / (1.0 - r * r)).sqrt();
            2.0 * (1.0 - t_dist.cdf(t.abs()))
        };
        scored.push((j, r.abs(), p));
    }
    let keep: Vec<usize> = scored.iter().filter(|s| s.2 < alpha).map(|s| s.0).collect();
    if !keep.is_empty() {
        return Ok(keep);
    }
    Ok(scored
        .iter()
        .fold(None::<(usize, f64)>, |acc, s| match acc {
            Some((_, r)) if r >= s.1 => acc,
            _ => Some((s.0, s.1)),
        })
        .map(|(j, _)| vec![j])
        .unwrap_or_default())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keeps_correlated_and_drops_constant() {
        let y: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let strong: Vec<f64> = y.iter().map(|v| v * 2.0 + (v * 7.0).sin()).collect();
        let noise: Vec<f64> = (0..50).map(|i| ((i * 37) % 11) as f64).collect();
        let flat = vec![1.0; 50];
        let keep = screen_correlation(&[noise, strong, flat], &y, 0.10).unwrap();
        assert!(keep.contains(&1));
        assert!(!keep.contains(&2));
    }

    #[test]
    fn falls_back_to_top_one() {
        let y = vec![1.0, 2.0, 1.0, 2.0, 1.0, 2.0];
        let a = vec![1.0, 1.0, 2.0, 2.0, 1.0, 1.0];
        let b = vec![1.0, 2.0, 2.0, 1.0, 1.0, 1.5];
        let keep = screen_correlation(&[a, b], &y, 1e-6).unwrap();
        assert_eq!(keep, vec![1]);
    }

    #[test]
    fn p_value_matches_closed_form_for_known_t() {
        // r = 0.5, n = 11 -> t = 0.5 * sqrt(9 / 0.75) = sqrt(3)
        let t_dist = StudentsT::new(0.0, 1.0, 9.0).unwrap();
        let p = 2.0 * (1.0 - t_dist.cdf(3f64.sqrt()));
        assert!(p > 0.10 && p < 0.13);
    }
}
