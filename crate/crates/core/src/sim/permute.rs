//! Treatment-blind Type-I audits: permute the treatment labels, rerun the
//! estimator, count rejections of the no-effect null.

use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;

use rand::seq::SliceRandom;
use rand::RngCore;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{Binomial, DiscreteCDF};

use super::dgp::replicate_rng;
use super::replicate::EstimatorSpec;
use crate::data::TrialDataset;
use crate::error::{ApsError, Result};

pub const MIN_PERMUTATIONS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PermutationAudit {
    pub estimator: String,
    pub permutations: usize,
    pub rejections: usize,
    pub failures: usize,
    pub rate: f64,
    /// Central 95% range of the rejection rate of a nominal 5% test.
    pub interval: (f64, f64),
}

impl PermutationAudit {
    pub fn within_interval(&self) -> bool {
        self.interval.0 <= self.rate && self.rate <= self.interval.1
    }
}

/// Central `level` range of `X / b` for `X ~ Binomial(b, alpha)`, from the
/// exact binomial quantiles.
pub fn null_rejection_interval(b: usize, alpha: f64, level: f64) -> (f64, f64) {
    let dist = Binomial::new(alpha, b as u64).expect("valid binomial");
    let tail = (1.0 - level) / 2.0;
    let quantile = |p: f64| (0..=b as u64).find(|&k| dist.cdf(k) >= p).unwrap_or(b as u64);
    (quantile(tail) as f64 / b as f64, quantile(1.0 - tail) as f64 / b as f64)
}

/// Checksum of covariates and outcome.
pub fn covariate_outcome_checksum(data: &TrialDataset) -> u64 {
    let mut h = DefaultHasher::new();
    for col in data.covariates() {
        for v in col {
            h.write_u64(v.to_bits());
        }
    }
    for v in data.outcome() {
        h.write_u64(v.to_bits());
    }
    h.finish()
}

/// Treatment labels shuffled within strata (or overall without strata).
pub fn permute_treatment<R: rand::Rng>(data: &TrialDataset, rng: &mut R) -> Vec<u8> {
    let mut a = data.treatment().to_vec();
    match data.strata() {
        None => a.shuffle(rng),
        Some(s) => {
            let n_strata = s.iter().max().map_or(0, |m| m + 1);
            for k in 0..n_strata {
                let idx: Vec<usize> = (0..a.len()).filter(|&i| s[i] == k).collect();
                let mut vals: Vec<u8> = idx.iter().map(|&i| a[i]).collect();
                vals.shuffle(rng);
                for (&i, v) in idx.iter().zip(vals) {
                    a[i] = v;
                }
            }
        }
    }
    a
}

/// Rejection rate of `estimator` over `b` within-strata permutations of the
/// treatment. Failures count as non-rejections.
pub fn treatment_blind_type1(data: &TrialDataset, estimator: &EstimatorSpec, b: usize, seed: u64) -> Result<PermutationAudit> {
    if b < MIN_PERMUTATIONS {
        return Err(ApsError::Contract(format!(
            "at least {MIN_PERMUTATIONS} permutations required, got {b}"
        )));
    }
    let checksum = covariate_outcome_checksum(data);
    let null = estimator.estimand.scale.null_value();
    let outcomes: Vec<Result<Option<bool>>> = (0..b as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = replicate_rng(seed, k);
            let permuted = data.with_treatment(permute_treatment(data, &mut rng))?;
            if covariate_outcome_checksum(&permuted) != checksum {
                return Err(ApsError::Contract("permutation altered covariates or outcome".into()));
            }
            match estimator.run(&permuted, rng.next_u64()) {
                Ok((fit, _)) => Ok(Some(!(fit.ci.0 <= null && null <= fit.ci.1))),
                Err(e) => {
                    log::warn!("{} failed on permutation {k}: {e}", estimator.name());
                    Ok(None)
                }
            }
        })
        .collect();
    let mut rejections = 0;
    let mut failures = 0;
    for o in outcomes {
        match o? {
            Some(true) => rejections += 1,
            Some(false) => {}
            None => failures += 1,
        }
    }
    Ok(PermutationAudit {
        estimator: estimator.name().to_string(),
        permutations: b,
        rejections,
        failures,
        rate: rejections as f64 / b as f64,
        interval: null_rejection_interval(b, 0.05, 0.95),
    })
}
