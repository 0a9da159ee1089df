//! Experiment orchestration and reporting.

pub mod cv;
pub mod experiments;
pub mod report;
pub mod stats;

pub use cv::{cross_validate, fold_assignment, CvResult};
pub use experiments::{
    crn_comparison, derive_seed, desk_train_config, fold_seed, log_grid, matched_pairs, model_id, regularization_grid,
    run_mlr_validation, run_model_selection, run_regularization_sweep, run_structure_sweep, run_sweep, run_xor,
    shared_crn, structure_grid, width_trends, CrnComparison, MatchedPair, MlrValidationConfig, RegFactor,
    SelectionSummary, SweepSpec, XorConfig,
};
pub use report::{ExperimentReport, ReportRow, CSV_HEADER};
pub use stats::{argmin, average_ranks, pearson, spearman};
