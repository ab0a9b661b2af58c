//! Datasets, patient-level folds and training.

mod folds;
mod manifest;
mod train;

pub use folds::{make_folds, FoldPlan, DEFAULT_FOLDS};
pub use manifest::{Manifest, ManifestRow, MANIFEST_COLUMNS};
pub use train::{
    aggregate, prepare_cases, run_cv, summarize, train_fold, Case, CaseResult, CvReport, CvSummary,
    EpochStats, FoldResult, MemberCurves, TrainConfig,
};
