#![allow(dead_code)]

use aps_core::sim::dgp::{replicate_rng, simulate_trial, SimulatedTrial};
use aps_core::sim::{Design, DgpSpec, Scenario};
use aps_core::{OutcomeKind, TrialDataset};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn trial(kind: OutcomeKind, scenario: Scenario, n: usize, design: Design, seed: u64) -> SimulatedTrial {
    let spec = DgpSpec::new(kind, scenario, n, design);
    simulate_trial(&spec, &mut replicate_rng(seed, 0)).unwrap()
}

pub fn draw(kind: OutcomeKind, scenario: Scenario, n: usize, seed: u64) -> TrialDataset {
    trial(kind, scenario, n, Design::Simple, seed).data
}

/// Alternating treatment, `p` standard-uniform covariates centred at zero,
/// outcome from `f(a, w)` on the probability scale (binary draws).
pub fn binary_dataset(n: usize, p: usize, seed: u64, f: impl Fn(f64, &[f64]) -> f64) -> TrialDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<Vec<f64>> = (0..p).map(|_| (0..n).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect()).collect();
    let a: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    let y: Vec<f64> = (0..n)
        .map(|i| {
            let row: Vec<f64> = w.iter().map(|c| c[i]).collect();
            (rng.gen::<f64>() < f(a[i] as f64, &row)) as u8 as f64
        })
        .collect();
    let names = (1..=p).map(|j| format!("W{j}")).collect();
    TrialDataset::new(names, w, a, y, OutcomeKind::Binary, None, 0.5).unwrap()
}

pub fn expit(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn arm_means(data: &TrialDataset) -> (f64, f64) {
    let arm = |a: u8| {
        let v: Vec<f64> = (0..data.n())
            .filter(|&i| data.treatment()[i] == a)
            .map(|i| data.outcome()[i])
            .collect();
        mean(&v)
    };
    (arm(1), arm(0))
}
