//! Metrics, leave-one-subject-out evaluation and reporting.

pub mod loso;
pub mod metrics;
pub mod report;
pub mod resample;
pub mod stats;

pub use loso::{
    loso, loso_plan, verify_plan, Classifier, Dataset, Fold, FoldInput, FoldOutput, FoldResult,
    LosoOptions, ModelReport, ModelSpec, Summary,
};
pub use metrics::{
    accuracy, confusion, kappa, normalize_rows, ConfusionMatrix, Kappa, NormalizedMatrix,
};
pub use report::{render, EvalReport, ReportFormat};
pub use resample::{oversample_indices, rebalance};
pub use stats::{paired_ttest, TTest};
