//! Cross-validation, metrics and significance tests.

pub mod baselines;
pub mod cv;
pub mod folds;
pub mod metrics;
pub mod stats;

pub use baselines::{baseline, compare, Comparison, Metric, PublishedBaseline, BASELINES};
pub use cv::{
    external_validate, fit_pipeline, run_cv, write_results_csv, write_summary_json, CvConfig, FittedPipeline,
    FoldResult, Layout, MetricReport, Pipeline, SummaryRow,
};
pub use folds::stratified_folds;
pub use metrics::{accuracy, mcc, ConfusionMatrix};
pub use stats::{student_t_cdf, welch_t_one_tailed, Summary, WelchResult};
