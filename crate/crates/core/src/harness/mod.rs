//! Training, cross-validation, ablation and survival analysis pipelines.

pub mod ablation;
pub mod analysis;
pub mod cv;
mod folds;
mod metrics;
mod optim;
pub mod settings;
mod train;

pub use ablation::{ablation_csv, run_ablation, AblationRow, Cell};
pub use analysis::{run_analysis, AnalysisOptions, AnalysisReport, Factor, Subgroup, UnivariateScore};
pub use cv::{audit_cv_artifacts, derive_seed, run_cv, AuditReport, CvOptions, CvRun, FoldOutcome, FoldResult};
pub use folds::{make_folds, FoldSplit, VALIDATION_FRACTION};
pub use metrics::{compute_metrics, evaluate, margin_metrics, Metrics};
pub use optim::{Optimizer, OptimizerKind};
pub use settings::Settings;
pub use train::{train, train_log_csv, validation_metric, EpochLog, TrainConfig, TrainOutcome, TRAIN_LOG_HEADER};
