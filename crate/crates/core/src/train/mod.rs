//! Training regimes, cross-validation, metrics and the ablation grid.

pub mod ablation;
pub mod cv;
pub mod data;
pub mod folds;
pub mod labels;
pub mod metrics;
pub mod trainer;

pub use ablation::{loss_log_csv, results_csv, run_ablation, AblationRow};
pub use cv::{cross_validate, evaluate, fold_seed, run_fold, FoldOutcome};
pub use data::{Dataset, Example};
pub use folds::{make_folds, FoldSplit, DEFAULT_FOLDS};
pub use labels::{class_index, LabelMap};
pub use metrics::{Confusion, CvSummary, MetricsReport};
pub use trainer::{accuracy, eval_loss, make_batches, train, LossRecord, Monitor, Regime, TrainReport, TrainingPlan};

#[cfg(test)]
mod tests;
