//! Simulation laboratory for two-arm randomized trials.

pub mod dgp;
pub mod metrics;
pub mod permute;
pub mod replicate;

pub use dgp::{Design, DgpSpec, Scenario};
pub use metrics::{summarize_metrics, EstimatorMetrics, MetricsTable};
pub use permute::{treatment_blind_type1, PermutationAudit};
pub use replicate::{default_roster, run_replicates, EstimatorKind, EstimatorSpec, ReplicateReport};
