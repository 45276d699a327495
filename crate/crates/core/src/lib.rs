pub mod aps;
pub mod data;
pub mod error;
pub mod learners;
pub(crate) mod linalg;
pub mod sim;
pub mod tmle;

pub use aps::{fit_aps_tmle, ApsConfig, CvRiskLedger, Preset};
pub use data::{load_csv, make_folds, CsvSchema, FoldAssignment, OutcomeBounds, OutcomeKind, RowFilter, TrialDataset};
pub use error::{ApsError, Result};
pub use learners::{fit_learner, predict, LearnerKind, LearnerSpec, Role};
pub use tmle::{run_tmle, EstimandSpec, Scale, Target, TmleFit};
