//! Validation machinery: audits and rates, ROC analysis, leave-one-patient-out
//! and independent-cohort validation, class-weight tuning and PCA.

pub mod audit;
pub mod pca;
pub mod roc;
pub mod validation;

pub use audit::{categorize_before_physician, rates, AuditRow, Category, DecisionAudit, RatesReport, DEFAULT_LOOKAHEAD};
pub use pca::{pca, pca_examples, write_projection_csv, PcaResult, DEFAULT_COMPONENTS};
pub use roc::{roc, roc_auto, select_threshold, threshold_grid, write_roc_csv, RocCurve, RocPoint};
pub use validation::{
    holdout_split, lopo, rdv, tune_class_weights, FoldReport, LopoReport, RdvReport, ThresholdPolicy, TrainingSpec, TuneConfig,
    TuneOutcome, TuneTrial,
};
