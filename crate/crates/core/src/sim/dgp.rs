//! Data-generating processes for simulated two-arm trials.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::{Bernoulli, Binomial, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{OutcomeKind, TrialDataset};
use crate::error::Result;
use crate::linalg::expit;
use crate::tmle::Scale;

pub const N_COVARIATES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Linear,
    Interactive,
    Polynomial,
    #[serde(rename = "treatment-only", alias = "treatmentonly")]
    TreatmentOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Design {
    Simple,
    Stratified,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DgpSpec {
    pub outcome_kind: OutcomeKind,
    pub scenario: Scenario,
    pub n: usize,
    pub design: Design,
    /// Both potential outcomes follow the control-arm formula.
    #[serde(default)]
    pub null_effect: bool,
}

impl DgpSpec {
    pub fn new(outcome_kind: OutcomeKind, scenario: Scenario, n: usize, design: Design) -> Self {
        Self {
            outcome_kind,
            scenario,
            n,
            design,
            null_effect: false,
        }
    }

    /// Effect scale reported for this setting: sample risk ratio for binary
    /// outcomes, sample average treatment effect for continuous ones.
    pub fn scale(&self) -> Scale {
        match self.outcome_kind {
            OutcomeKind::Binary => Scale::Ratio,
            OutcomeKind::Continuous => Scale::Difference,
        }
    }
}

/// Measured covariates (column-major) and the two unmeasured ones.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateDraw {
    pub w: Vec<Vec<f64>>,
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
}

/// One simulated trial with both potential outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedTrial {
    pub data: TrialDataset,
    pub y1: Vec<f64>,
    pub y0: Vec<f64>,
}

/// Generator for replicate `index`: the base seed selects the key and the
/// replicate index the stream, so each replicate is reproducible alone.
pub fn replicate_rng(base_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(index);
    rng
}

pub fn gen_covariates<R: Rng>(spec: &DgpSpec, rng: &mut R) -> CovariateDraw {
    let n = spec.n;
    match spec.outcome_kind {
        OutcomeKind::Binary => {
            let w = (0..N_COVARIATES)
                .map(|_| (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
                .collect();
            let u1 = (0..n).map(|_| rng.gen::<f64>()).collect();
            let u2 = (0..n).map(|_| rng.gen::<f64>()).collect();
            CovariateDraw { w, u1, u2 }
        }
        OutcomeKind::Continuous => {
            let half = Bernoulli::new(0.5).expect("valid probability");
            let binom = Binomial::new(3, 0.3).expect("valid binomial");
            let mut w = vec![Vec::with_capacity(n); N_COVARIATES];
            let mut u1 = Vec::with_capacity(n);
            let mut u2 = Vec::with_capacity(n);
            for _ in 0..n {
                let w1 = half.sample(rng) as u8 as f64;
                let w2 = (rng.gen::<f64>() < 0.2 * w1) as u8 as f64;
                let w3 = rng.gen_range(0.0..5.0);
                let w4 = expit(-2.0 + w1 + w2 + rng.gen_range(0.0..2.0));
                let w5 = 1.0 + binom.sample(rng) as f64;
                for (col, v) in w.iter_mut().zip([w1, w2, w3, w4, w5]) {
                    col.push(v);
                }
                u1.push(rng.gen_range(0.0..0.5));
                u2.push(rng.gen::<f64>());
            }
            CovariateDraw { w, u1, u2 }
        }
    }
}

/// Linear predictor (binary) or outcome (continuous) for one unit.
pub fn outcome_formula(kind: OutcomeKind, scenario: Scenario, a: f64, w: [f64; 5], u1: f64, u2: f64) -> f64 {
    let [w1, w2, w3, w4, w5] = w;
    match (kind, scenario) {
        (OutcomeKind::Binary, Scenario::Linear) => a + w1 - w2 + w3 - w4 + w5 - 2.0 * a * w1 + u2,
        (OutcomeKind::Binary, Scenario::Interactive) => {
            a + w1 + w2 + w3 + w4 + w5 + a * w1 + a * w2 * w4 + a * w3 + a * w5 * u2 + u2
        }
        (OutcomeKind::Binary, Scenario::Polynomial) => {
            a + w1 + w2 + w3 + w4 + w5 - w1 * w3 + 2.0 * w1 * w3 * w4 - w4 * (1.0 - w1) + u2
        }
        (OutcomeKind::Binary, Scenario::TreatmentOnly) => 0.1 * a + 2.0 * u2,
        (OutcomeKind::Continuous, Scenario::Linear) => {
            90.0 + 0.07 * a + 0.7 * w1 + 0.3 * w2 + 0.1 * w3 + 0.3 * w4 + 0.4 * w5 + 0.25 * a * w1 + 5.0 * u1 + u2
        }
        (OutcomeKind::Continuous, Scenario::Interactive) => {
            150.0 + 0.05 * a + 0.33 * w1 - 0.25 * w2 + 0.5 * w3 - 0.2 * w4 + 0.05 * w5
                + 0.01 * a * w1
                + 0.02 * a * w3
                + 0.3 * a * u1
                + 5.8 * u1
                + u2
        }
        (OutcomeKind::Continuous, Scenario::Polynomial) => {
            90.0 + 0.17 * a + 0.33 * (w1 + w2 + w3 + w4 + w5) - 0.2 * w1 * w3
                + 0.5 * w1 * (0.8 - 0.6 * w4) * w3
                + 0.25 * (1.0 - w1) * (-0.2 + 0.15 * w4)
                + 4.7 * u1
                + u2
        }
        (OutcomeKind::Continuous, Scenario::TreatmentOnly) => 90.0 + 0.1 * a + 3.0 * u1 + u2,
    }
}

/// Potential outcomes `(Y(1), Y(0))` for every unit of the draw.
pub fn gen_counterfactuals(spec: &DgpSpec, draw: &CovariateDraw) -> (Vec<f64>, Vec<f64>) {
    let n = draw.u1.len();
    let a1 = if spec.null_effect { 0.0 } else { 1.0 };
    let mut y1 = Vec::with_capacity(n);
    let mut y0 = Vec::with_capacity(n);
    for i in 0..n {
        let w = [draw.w[0][i], draw.w[1][i], draw.w[2][i], draw.w[3][i], draw.w[4][i]];
        let f = |a: f64| outcome_formula(spec.outcome_kind, spec.scenario, a, w, draw.u1[i], draw.u2[i]);
        match spec.outcome_kind {
            OutcomeKind::Binary => {
                y1.push((draw.u1[i] < expit(f(a1))) as u8 as f64);
                y0.push((draw.u1[i] < expit(f(0.0))) as u8 as f64);
            }
            OutcomeKind::Continuous => {
                y1.push(f(a1));
                y0.push(f(0.0));
            }
        }
    }
    (y1, y0)
}

/// Stratum `1(W1 > 0)` of each unit.
pub fn strata_of(w: &[Vec<f64>]) -> Vec<usize> {
    w[0].iter().map(|&v| (v > 0.0) as usize).collect()
}

/// Simple design: iid Bernoulli(0.5). Stratified design: a shuffled
/// balanced block within each stratum of `1(W1 > 0)`.
pub fn assign_treatment<R: Rng>(design: Design, w: &[Vec<f64>], rng: &mut R) -> Vec<u8> {
    let n = w[0].len();
    match design {
        Design::Simple => (0..n).map(|_| rng.gen::<bool>() as u8).collect(),
        Design::Stratified => {
            let strata = strata_of(w);
            let mut a = vec![0u8; n];
            for s in 0..2 {
                let members: Vec<usize> = (0..n).filter(|&i| strata[i] == s).collect();
                let mut block: Vec<u8> = (0..members.len()).map(|k| (k % 2) as u8).collect();
                block.shuffle(rng);
                for (&i, &v) in members.iter().zip(&block) {
                    a[i] = v;
                }
            }
            a
        }
    }
}

/// Sample effect of the draw; `None` when the ratio is undefined.
pub fn true_sample_effect(y1: &[f64], y0: &[f64], scale: Scale) -> Option<f64> {
    let n = y1.len() as f64;
    let m1 = y1.iter().sum::<f64>() / n;
    let m0 = y0.iter().sum::<f64>() / n;
    match scale {
        Scale::Difference => Some(m1 - m0),
        Scale::Ratio => (m0 > 0.0).then(|| m1 / m0),
    }
}

/// Draws covariates, counterfactuals and treatment, and reveals `Y = Y(A)`.
pub fn simulate_trial<R: Rng>(spec: &DgpSpec, rng: &mut R) -> Result<SimulatedTrial> {
    let draw = gen_covariates(spec, rng);
    let (y1, y0) = gen_counterfactuals(spec, &draw);
    let a = assign_treatment(spec.design, &draw.w, rng);
    let y = a
        .iter()
        .enumerate()
        .map(|(i, &ai)| if ai == 1 { y1[i] } else { y0[i] })
        .collect();
    let strata = (spec.design == Design::Stratified).then(|| strata_of(&draw.w));
    let names = (1..=N_COVARIATES).map(|j| format!("W{j}")).collect();
    let data = TrialDataset::new(names, draw.w, a, y, spec.outcome_kind, strata, 0.5)?;
    Ok(SimulatedTrial { data, y1, y0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    const ZERO: [f64; 5] = [0.0; 5];

    #[test]
    fn binary_formula_points() {
        let b = OutcomeKind::Binary;
        assert!((expit(outcome_formula(b, Scenario::Linear, 1.0, ZERO, 0.0, 0.0)) - 0.731_058_578_630_004_9).abs() < 1e-12);
        assert!((expit(outcome_formula(b, Scenario::TreatmentOnly, 1.0, ZERO, 0.0, 0.0)) - 0.524_979_187_478_939_8).abs() < 1e-12);
        // a = 1, W = (1, 0, 0, 0, 0), U2 = 0.5: 1 + 1 - 2 + 0.5
        assert_eq!(outcome_formula(b, Scenario::Linear, 1.0, [1.0, 0.0, 0.0, 0.0, 0.0], 0.0, 0.5), 0.5);
        // W = 1-vector, a = 1, U2 = 0: 1 + 5 + 1 + 1 + 1 + 0 + 0
        assert_eq!(outcome_formula(b, Scenario::Interactive, 1.0, [1.0; 5], 0.0, 0.0), 9.0);
        assert_eq!(outcome_formula(b, Scenario::Interactive, 0.0, ZERO, 0.3, 0.2), 0.2);
        // W = 1-vector, a = 0: 5 - 1 + 2 - 0 + U2
        assert_eq!(outcome_formula(b, Scenario::Polynomial, 0.0, [1.0; 5], 0.0, 0.25), 6.25);
        assert_eq!(outcome_formula(b, Scenario::Polynomial, 1.0, ZERO, 0.0, 0.0), 1.0);
        assert_eq!(outcome_formula(b, Scenario::Linear, 0.0, [0.0, 0.0, 0.0, 0.0, 2.0], 0.0, 0.0), 2.0);
        assert_eq!(outcome_formula(b, Scenario::TreatmentOnly, 0.0, [5.0; 5], 0.9, 0.5), 1.0);
    }

    #[test]
    fn continuous_formula_points() {
        let c = OutcomeKind::Continuous;
        assert_eq!(outcome_formula(c, Scenario::Linear, 0.0, ZERO, 0.0, 0.0), 90.0);
        assert!((outcome_formula(c, Scenario::Linear, 1.0, [1.0; 5], 0.1, 0.2) - (90.0 + 0.07 + 0.7 + 0.3 + 0.1 + 0.3 + 0.4 + 0.25 + 0.5 + 0.2)).abs() < 1e-12);
        assert!((outcome_formula(c, Scenario::Linear, 1.0, ZERO, 0.0, 0.0) - 90.07).abs() < 1e-12);
        assert_eq!(outcome_formula(c, Scenario::Interactive, 0.0, ZERO, 0.0, 0.0), 150.0);
        assert!((outcome_formula(c, Scenario::Interactive, 1.0, ZERO, 0.5, 0.0) - (150.0 + 0.05 + 0.15 + 2.9)).abs() < 1e-12);
        assert!((outcome_formula(c, Scenario::Interactive, 1.0, [1.0, 0.0, 2.0, 0.0, 0.0], 0.0, 0.0) - (150.05 + 0.33 + 1.0 + 0.01 + 0.04)).abs() < 1e-12);
        assert!((outcome_formula(c, Scenario::Polynomial, 0.0, ZERO, 0.0, 0.0) - (90.0 - 0.05)).abs() < 1e-12);
        // W1 = 1, W3 = 1, W4 = 0: 0.33 * 2 - 0.2 + 0.5 * 0.8
        assert!((outcome_formula(c, Scenario::Polynomial, 0.0, [1.0, 0.0, 1.0, 0.0, 0.0], 0.0, 0.0) - (90.0 + 0.66 - 0.2 + 0.4)).abs() < 1e-12);
        assert!((outcome_formula(c, Scenario::Polynomial, 1.0, ZERO, 0.1, 0.0) - (90.17 - 0.05 + 0.47)).abs() < 1e-12);
        assert!((outcome_formula(c, Scenario::TreatmentOnly, 1.0, ZERO, 0.5, 1.0) - 92.6).abs() < 1e-12);
    }

    #[test]
    fn binary_covariates_are_standard_normal() {
        let spec = DgpSpec::new(OutcomeKind::Binary, Scenario::Linear, 5000, Design::Simple);
        let d = gen_covariates(&spec, &mut replicate_rng(1, 0));
        for col in &d.w {
            let m = col.iter().sum::<f64>() / 5000.0;
            let v = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 4999.0;
            assert!(m.abs() < 0.1 && (v - 1.0).abs() < 0.1);
        }
    }

    #[test]
    fn continuous_w5_support() {
        let spec = DgpSpec::new(OutcomeKind::Continuous, Scenario::Linear, 2000, Design::Simple);
        let d = gen_covariates(&spec, &mut replicate_rng(2, 0));
        assert!(d.w[4].iter().all(|v| [1.0, 2.0, 3.0, 4.0].contains(v)));
        assert!(d.u1.iter().all(|&u| (0.0..0.5).contains(&u)));
        assert!(d.w[1].iter().zip(&d.w[0]).all(|(w2, w1)| *w1 == 1.0 || *w2 == 0.0));
    }

    #[test]
    fn stratified_blocks_are_balanced() {
        let w1: Vec<f64> = (0..21).map(|i| if i < 10 { 1.0 } else { -1.0 }).collect();
        let w = vec![w1; 5];
        let a = assign_treatment(Design::Stratified, &w, &mut replicate_rng(3, 0));
        let t_pos: usize = (0..10).map(|i| a[i] as usize).sum();
        let t_neg: usize = (10..21).map(|i| a[i] as usize).sum();
        assert_eq!(t_pos, 5);
        assert!(t_neg == 5 || t_neg == 6);
    }

    #[test]
    fn simple_design_is_near_half() {
        let w = vec![vec![0.0; 5000]; 5];
        let a = assign_treatment(Design::Simple, &w, &mut replicate_rng(4, 0));
        let frac = a.iter().map(|&v| v as f64).sum::<f64>() / 5000.0;
        assert!((frac - 0.5).abs() < 0.03);
    }

    #[test]
    fn observed_outcome_is_counterfactual_of_assigned_arm() {
        let spec = DgpSpec::new(OutcomeKind::Binary, Scenario::Polynomial, 300, Design::Stratified);
        let t = simulate_trial(&spec, &mut replicate_rng(5, 7)).unwrap();
        for i in 0..300 {
            let expected = if t.data.treatment()[i] == 1 { t.y1[i] } else { t.y0[i] };
            assert_eq!(t.data.outcome()[i], expected);
        }
    }

    #[test]
    fn same_seed_same_draw() {
        let spec = DgpSpec::new(OutcomeKind::Continuous, Scenario::Interactive, 50, Design::Simple);
        assert_eq!(
            simulate_trial(&spec, &mut replicate_rng(6, 3)).unwrap(),
            simulate_trial(&spec, &mut replicate_rng(6, 3)).unwrap()
        );
    }

    #[test]
    fn null_effect_gives_identical_potential_outcomes() {
        let mut spec = DgpSpec::new(OutcomeKind::Binary, Scenario::TreatmentOnly, 200, Design::Simple);
        spec.null_effect = true;
        let t = simulate_trial(&spec, &mut replicate_rng(7, 0)).unwrap();
        assert_eq!(t.y1, t.y0);
        assert_eq!(true_sample_effect(&t.y1, &t.y0, Scale::Ratio), Some(1.0));
        assert_eq!(true_sample_effect(&t.y1, &t.y0, Scale::Difference), Some(0.0));
    }
}
