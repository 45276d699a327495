//! Trial data model: validated two-arm datasets, CSV ingestion, outcome
//! bounding, subgroup filtering and arm-stratified fold construction.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ApsError, Result};

/// Measurement type of the outcome column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeKind {
    Binary,
    Continuous,
}

/// An immutable, validated two-arm trial dataset.
///
/// Covariates are stored column-major. Treatment is coded 0/1 and the
/// allocation probability `P(A = 1)` is treated as known.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialDataset {
    covariate_names: Vec<String>,
    covariates: Vec<Vec<f64>>,
    treatment: Vec<u8>,
    outcome: Vec<f64>,
    outcome_kind: OutcomeKind,
    strata: Option<Vec<usize>>,
    allocation_prob: f64,
}

impl TrialDataset {
    pub fn new(
        covariate_names: Vec<String>,
        covariates: Vec<Vec<f64>>,
        treatment: Vec<u8>,
        outcome: Vec<f64>,
        outcome_kind: OutcomeKind,
        strata: Option<Vec<usize>>,
        allocation_prob: f64,
    ) -> Result<Self> {
        let n = treatment.len();
        if outcome.len() != n {
            return Err(ApsError::Dataset(format!(
                "outcome has {} rows, treatment has {n}",
                outcome.len()
            )));
        }
        if covariate_names.len() != covariates.len() {
            return Err(ApsError::Dataset(
                "covariate names and columns differ in count".into(),
            ));
        }
        for (name, col) in covariate_names.iter().zip(&covariates) {
            if col.len() != n {
                return Err(ApsError::Dataset(format!(
                    "covariate `{name}` has {} rows, expected {n}",
                    col.len()
                )));
            }
            if let Some(i) = col.iter().position(|v| !v.is_finite()) {
                return Err(ApsError::Validation {
                    row: i + 1,
                    column: name.clone(),
                    message: "non-finite covariate value".into(),
                });
            }
        }
        if let Some(s) = &strata {
            if s.len() != n {
                return Err(ApsError::Dataset("strata length mismatch".into()));
            }
        }
        if let Some(i) = treatment.iter().position(|&a| a > 1) {
            return Err(ApsError::Validation {
                row: i + 1,
                column: "treatment".into(),
                message: format!("treatment must be 0 or 1, got {}", treatment[i]),
            });
        }
        for (i, &y) in outcome.iter().enumerate() {
            let bad = match outcome_kind {
                OutcomeKind::Binary => y != 0.0 && y != 1.0,
                OutcomeKind::Continuous => !y.is_finite(),
            };
            if bad {
                return Err(ApsError::Validation {
                    row: i + 1,
                    column: "outcome".into(),
                    message: format!("invalid {outcome_kind:?} outcome {y}"),
                });
            }
        }
        let treated = treatment.iter().filter(|&&a| a == 1).count();
        if treated == 0 || treated == n {
            return Err(ApsError::Dataset("both arms must be non-empty".into()));
        }
        if !(allocation_prob > 0.0 && allocation_prob < 1.0) {
            return Err(ApsError::Dataset(format!(
                "allocation probability {allocation_prob} outside (0, 1)"
            )));
        }
        Ok(Self {
            covariate_names,
            covariates,
            treatment,
            outcome,
            outcome_kind,
            strata,
            allocation_prob,
        })
    }

    pub fn n(&self) -> usize {
        self.treatment.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariates.len()
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn covariates(&self) -> &[Vec<f64>] {
        &self.covariates
    }

    pub fn covariate(&self, j: usize) -> &[f64] {
        &self.covariates[j]
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|c| c == name)
    }

    pub fn treatment(&self) -> &[u8] {
        &self.treatment
    }

    pub fn outcome(&self) -> &[f64] {
        &self.outcome
    }

    pub fn outcome_kind(&self) -> OutcomeKind {
        self.outcome_kind
    }

    pub fn strata(&self) -> Option<&[usize]> {
        self.strata.as_deref()
    }

    pub fn allocation_prob(&self) -> f64 {
        self.allocation_prob
    }

    pub fn n_treated(&self) -> usize {
        self.treatment.iter().filter(|&&a| a == 1).count()
    }

    /// Rows `idx`, keeping the parent's (known) allocation probability.
    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Self::new(
            self.covariate_names.clone(),
            self.covariates.iter().map(|c| pick(c)).collect(),
            idx.iter().map(|&i| self.treatment[i]).collect(),
            pick(&self.outcome),
            self.outcome_kind,
            self.strata
                .as_ref()
                .map(|s| idx.iter().map(|&i| s[i]).collect()),
            self.allocation_prob,
        )
    }

    /// Same units with a replacement treatment vector.
    pub fn with_treatment(&self, treatment: Vec<u8>) -> Result<Self> {
        Self::new(
            self.covariate_names.clone(),
            self.covariates.clone(),
            treatment,
            self.outcome.clone(),
            self.outcome_kind,
            self.strata.clone(),
            self.allocation_prob,
        )
    }

    /// Same units with a replacement covariate set.
    pub fn with_covariates(&self, names: Vec<String>, covariates: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(
            names,
            covariates,
            self.treatment.clone(),
            self.outcome.clone(),
            self.outcome_kind,
            self.strata.clone(),
            self.allocation_prob,
        )
    }

    fn with_outcome(&self, outcome: Vec<f64>) -> Self {
        Self {
            outcome,
            ..self.clone()
        }
    }

    /// Rescales a continuous outcome to `[0, 1]` using its observed range.
    pub fn bound_outcome(&self) -> Result<(Self, OutcomeBounds)> {
        if self.outcome_kind != OutcomeKind::Continuous {
            return Err(ApsError::Contract(
                "outcome bounding applies to continuous outcomes only".into(),
            ));
        }
        let lower = self.outcome.iter().copied().fold(f64::INFINITY, f64::min);
        let upper = self
            .outcome
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        if upper <= lower {
            return Err(ApsError::DegenerateOutcome(lower));
        }
        let bounds = OutcomeBounds { lower, upper };
        let scaled = self.outcome.iter().map(|&y| bounds.scale(y)).collect();
        Ok((self.with_outcome(scaled), bounds))
    }

    /// Units for which `keep(self, row)` holds; the allocation probability
    /// becomes the subgroup's treated fraction.
    pub fn subgroup<F>(&self, keep: F) -> Result<Self>
    where
        F: Fn(&TrialDataset, usize) -> bool,
    {
        let idx: Vec<usize> = (0..self.n()).filter(|&i| keep(self, i)).collect();
        let treated = idx.iter().filter(|&&i| self.treatment[i] == 1).count();
        if treated == 0 || treated == idx.len() {
            return Err(ApsError::Subgroup(format!(
                "subgroup has {treated} treated and {} control units; both arms must be non-empty",
                idx.len() - treated
            )));
        }
        let mut sub = self.select(&idx)?;
        sub.allocation_prob = treated as f64 / idx.len() as f64;
        Ok(sub)
    }
}

/// Affine map between a continuous outcome and the unit interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeBounds {
    pub lower: f64,
    pub upper: f64,
}

impl OutcomeBounds {
    /// Bounds used for binary outcomes, for which scaling is the identity.
    pub const UNIT: OutcomeBounds = OutcomeBounds {
        lower: 0.0,
        upper: 1.0,
    };

    pub fn range(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn scale(&self, y: f64) -> f64 {
        (y - self.lower) / self.range()
    }

    pub fn unscale(&self, y: f64) -> f64 {
        self.lower + y * self.range()
    }
}

/// Column roles for CSV ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub treatment: String,
    pub outcome: String,
    pub outcome_kind: OutcomeKind,
    #[serde(default)]
    pub covariates: Vec<String>,
    #[serde(default)]
    pub strata: Option<String>,
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| ApsError::Schema(format!("missing column `{name}`")))
}

fn parse_cell(record: &csv::StringRecord, idx: usize, row: usize, column: &str) -> Result<f64> {
    let raw = record.get(idx).unwrap_or("").trim();
    if raw.is_empty() || raw.eq_ignore_ascii_case("na") {
        return Err(ApsError::Validation {
            row,
            column: column.to_string(),
            message: "missing value".into(),
        });
    }
    raw.parse::<f64>().map_err(|_| ApsError::Validation {
        row,
        column: column.to_string(),
        message: format!("cannot parse `{raw}` as a number"),
    })
}

/// Reads a comma-separated file with a header row.
///
/// The allocation probability is set to the empirical treated fraction.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<TrialDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let a_idx = column_index(&headers, &schema.treatment)?;
    let y_idx = column_index(&headers, &schema.outcome)?;
    let w_idx = schema
        .covariates
        .iter()
        .map(|c| column_index(&headers, c))
        .collect::<Result<Vec<_>>>()?;
    let s_idx = schema
        .strata
        .as_deref()
        .map(|s| column_index(&headers, s))
        .transpose()?;

    let mut treatment = Vec::new();
    let mut outcome = Vec::new();
    let mut covariates = vec![Vec::new(); w_idx.len()];
    let mut strata = Vec::new();
    let mut stratum_ids: HashMap<String, usize> = HashMap::new();

    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row = r + 1;
        let a = parse_cell(&record, a_idx, row, &schema.treatment)?;
        if a != 0.0 && a != 1.0 {
            return Err(ApsError::Validation {
                row,
                column: schema.treatment.clone(),
                message: format!("treatment must be 0 or 1, got {a}"),
            });
        }
        treatment.push(a as u8);
        let y = parse_cell(&record, y_idx, row, &schema.outcome)?;
        if schema.outcome_kind == OutcomeKind::Binary && y != 0.0 && y != 1.0 {
            return Err(ApsError::Validation {
                row,
                column: schema.outcome.clone(),
                message: format!("binary outcome must be 0 or 1, got {y}"),
            });
        }
        outcome.push(y);
        for ((col, &idx), name) in covariates.iter_mut().zip(&w_idx).zip(&schema.covariates) {
            col.push(parse_cell(&record, idx, row, name)?);
        }
        if let Some(idx) = s_idx {
            let label = record.get(idx).unwrap_or("").trim();
            if label.is_empty() {
                return Err(ApsError::Validation {
                    row,
                    column: schema.strata.clone().unwrap_or_default(),
                    message: "missing value".into(),
                });
            }
            let next = stratum_ids.len();
            strata.push(*stratum_ids.entry(label.to_string()).or_insert(next));
        }
    }
    if treatment.is_empty() {
        return Err(ApsError::Dataset("file contains no data rows".into()));
    }
    let treated = treatment.iter().filter(|&&a| a == 1).count();
    let allocation_prob = treated as f64 / treatment.len() as f64;
    TrialDataset::new(
        schema.covariates.clone(),
        covariates,
        treatment,
        outcome,
        schema.outcome_kind,
        s_idx.map(|_| strata),
        allocation_prob,
    )
}

/// Writes the dataset with the column names in `schema`. Stratum ids are
/// written as integers.
pub fn write_csv(data: &TrialDataset, path: impl AsRef<Path>, schema: &CsvSchema) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec![schema.treatment.clone(), schema.outcome.clone()];
    header.extend(data.covariate_names().iter().cloned());
    if let (Some(name), Some(_)) = (&schema.strata, data.strata()) {
        header.push(name.clone());
    }
    writer.write_record(&header)?;
    for i in 0..data.n() {
        let mut row = vec![data.treatment[i].to_string(), data.outcome[i].to_string()];
        row.extend(data.covariates.iter().map(|c| c[i].to_string()));
        if let (Some(_), Some(s)) = (&schema.strata, data.strata()) {
            row.push(s[i].to_string());
        }
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Comparison operator in a subgroup expression.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl CmpOp {
    fn eval(self, lhs: f64, rhs: f64) -> bool {
        match self {
            CmpOp::Lt => lhs < rhs,
            CmpOp::Le => lhs <= rhs,
            CmpOp::Gt => lhs > rhs,
            CmpOp::Ge => lhs >= rhs,
            CmpOp::Eq => lhs == rhs,
            CmpOp::Ne => lhs != rhs,
        }
    }
}

/// Conjunction of covariate comparisons, e.g. `age < 30 & gender == 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct RowFilter {
    clauses: Vec<(String, CmpOp, f64)>,
}

impl RowFilter {
    pub fn parse(expr: &str) -> Result<Self> {
        let mut clauses = Vec::new();
        for part in expr.split('&') {
            let part = part.trim();
            if part.is_empty() {
                return Err(ApsError::Subgroup(format!("empty clause in `{expr}`")));
            }
            // two-character operators first
            let ops = [
                ("<=", CmpOp::Le),
                (">=", CmpOp::Ge),
                ("==", CmpOp::Eq),
                ("!=", CmpOp::Ne),
                ("<", CmpOp::Lt),
                (">", CmpOp::Gt),
            ];
            let (pos, tok, op) = ops
                .iter()
                .filter_map(|(tok, op)| part.find(tok).map(|p| (p, *tok, *op)))
                .min_by_key(|(p, tok, _)| (*p, usize::MAX - tok.len()))
                .ok_or_else(|| ApsError::Subgroup(format!("no comparison in `{part}`")))?;
            let name = part[..pos].trim();
            let value = part[pos + tok.len()..].trim();
            if name.is_empty() {
                return Err(ApsError::Subgroup(format!("missing column in `{part}`")));
            }
            let value: f64 = value
                .parse()
                .map_err(|_| ApsError::Subgroup(format!("bad number `{value}` in `{part}`")))?;
            clauses.push((name.to_string(), op, value));
        }
        Ok(Self { clauses })
    }

    /// Filters `data` to the matching rows.
    pub fn apply(&self, data: &TrialDataset) -> Result<TrialDataset> {
        let resolved = self
            .clauses
            .iter()
            .map(|(name, op, v)| {
                data.covariate_index(name)
                    .map(|j| (j, *op, *v))
                    .ok_or_else(|| ApsError::Subgroup(format!("unknown covariate `{name}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        data.subgroup(|d, i| resolved.iter().all(|&(j, op, v)| op.eval(d.covariate(j)[i], v)))
    }
}

/// Arm-stratified partition of units into `V` folds.
///
/// Fold ids are 0-based (`0..V`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FoldAssignment {
    pub v: usize,
    pub fold_of: Vec<usize>,
    pub seed: u64,
}

impl FoldAssignment {
    /// Validation-set indices for fold `v`, in increasing order.
    pub fn validation(&self, v: usize) -> Vec<usize> {
        (0..self.fold_of.len())
            .filter(|&i| self.fold_of[i] == v)
            .collect()
    }

    /// Training-set indices for fold `v`, in increasing order.
    pub fn training(&self, v: usize) -> Vec<usize> {
        (0..self.fold_of.len())
            .filter(|&i| self.fold_of[i] != v)
            .collect()
    }
}

/// Shuffles each arm with the seeded generator and deals units round-robin
/// into folds; the control arm continues where the treated arm stopped so
/// that overall fold sizes also stay balanced.
pub fn make_folds(data: &TrialDataset, v: usize, seed: u64) -> Result<FoldAssignment> {
    if v < 2 {
        return Err(ApsError::Fold(format!("need at least 2 folds, got {v}")));
    }
    let mut treated: Vec<usize> = (0..data.n()).filter(|&i| data.treatment[i] == 1).collect();
    let mut control: Vec<usize> = (0..data.n()).filter(|&i| data.treatment[i] == 0).collect();
    let smaller = treated.len().min(control.len());
    if v > smaller {
        return Err(ApsError::Fold(format!(
            "{v} folds requested but the smaller arm has {smaller} units"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    treated.shuffle(&mut rng);
    control.shuffle(&mut rng);
    let mut fold_of = vec![0; data.n()];
    for (pos, &i) in treated.iter().enumerate() {
        fold_of[i] = pos % v;
    }
    let offset = treated.len() % v;
    for (pos, &i) in control.iter().enumerate() {
        fold_of[i] = (offset + pos) % v;
    }
    Ok(FoldAssignment { v, fold_of, seed })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(treatment: Vec<u8>, outcome: Vec<f64>, kind: OutcomeKind) -> TrialDataset {
        let n = treatment.len();
        let w: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let p = treatment.iter().filter(|&&a| a == 1).count() as f64 / n as f64;
        TrialDataset::new(vec!["w".into()], vec![w], treatment, outcome, kind, None, p).unwrap()
    }

    #[test]
    fn bounding_maps_observed_range_to_unit_interval() {
        let d = toy(vec![1, 0, 1], vec![90.0, 92.0, 94.0], OutcomeKind::Continuous);
        let (b, bounds) = d.bound_outcome().unwrap();
        assert_eq!(b.outcome(), &[0.0, 0.5, 1.0]);
        assert_eq!(bounds, OutcomeBounds { lower: 90.0, upper: 94.0 });
    }

    #[test]
    fn bounding_rejects_binary_and_constant_outcomes() {
        let d = toy(vec![1, 0], vec![1.0, 0.0], OutcomeKind::Binary);
        assert!(matches!(d.bound_outcome(), Err(ApsError::Contract(_))));
        let d = toy(vec![1, 0], vec![3.0, 3.0], OutcomeKind::Continuous);
        assert!(matches!(d.bound_outcome(), Err(ApsError::DegenerateOutcome(_))));
    }

    #[test]
    fn invalid_treatment_rejected() {
        let r = TrialDataset::new(
            vec![],
            vec![],
            vec![0, 2],
            vec![0.0, 1.0],
            OutcomeKind::Binary,
            None,
            0.5,
        );
        assert!(matches!(r, Err(ApsError::Validation { row: 2, .. })));
    }

    #[test]
    fn folds_balance_small_arms() {
        let d = toy(
            vec![1, 1, 1, 1, 1, 0, 0, 0, 0, 0],
            vec![0.0; 10],
            OutcomeKind::Binary,
        );
        let f = make_folds(&d, 5, 3).unwrap();
        for v in 0..5 {
            let idx = f.validation(v);
            let t = idx.iter().filter(|&&i| d.treatment()[i] == 1).count();
            assert_eq!((t, idx.len() - t), (1, 1));
        }

        let d = toy(
            vec![1, 1, 1, 1, 1, 1, 0, 0, 0, 0],
            vec![0.0; 10],
            OutcomeKind::Binary,
        );
        let f = make_folds(&d, 2, 11).unwrap();
        for v in 0..2 {
            let idx = f.validation(v);
            let t = idx.iter().filter(|&&i| d.treatment()[i] == 1).count();
            assert_eq!((t, idx.len() - t), (3, 2));
        }
    }

    #[test]
    fn folds_reject_too_many_folds() {
        let d = toy(vec![1, 1, 1, 0, 0], vec![0.0; 5], OutcomeKind::Binary);
        assert!(matches!(make_folds(&d, 3, 0), Err(ApsError::Fold(_))));
        assert!(matches!(make_folds(&d, 1, 0), Err(ApsError::Fold(_))));
    }

    #[test]
    fn folds_are_deterministic() {
        let d = toy(
            (0..40).map(|i| (i % 3 == 0) as u8).collect(),
            vec![0.0; 40],
            OutcomeKind::Binary,
        );
        assert_eq!(make_folds(&d, 4, 9).unwrap(), make_folds(&d, 4, 9).unwrap());
        assert_ne!(make_folds(&d, 4, 9).unwrap(), make_folds(&d, 4, 10).unwrap());
    }

    #[test]
    fn subgroup_identity_and_empty_arm() {
        let d = toy(vec![1, 0, 1, 0], vec![1.0, 0.0, 0.0, 1.0], OutcomeKind::Binary);
        assert_eq!(d.subgroup(|_, _| true).unwrap(), d);
        let err = d.subgroup(|d, i| d.treatment()[i] == 1).unwrap_err();
        assert!(matches!(err, ApsError::Subgroup(_)));
    }

    #[test]
    fn subgroup_recomputes_allocation() {
        let d = toy(vec![1, 1, 1, 0, 0, 1], vec![0.0; 6], OutcomeKind::Binary);
        let s = d.subgroup(|d, i| d.covariate(0)[i] < 4.0).unwrap();
        assert_eq!(s.n(), 4);
        assert!((s.allocation_prob() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn row_filter_parses_conjunctions() {
        let f = RowFilter::parse("w >= 1 & w<3").unwrap();
        let d = toy(vec![1, 0, 1, 0], vec![0.0; 4], OutcomeKind::Binary);
        let s = f.apply(&d).unwrap();
        assert_eq!(s.covariate(0), &[1.0, 2.0]);
        assert!(RowFilter::parse("w").is_err());
        assert!(RowFilter::parse("zz < 1").unwrap().apply(&d).is_err());
    }
}
