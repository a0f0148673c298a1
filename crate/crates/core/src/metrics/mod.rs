//! Sample-set similarity, gap ratios and the concept-accuracy evaluator.

pub mod classifier;
pub mod distance;
pub mod report;

pub use classifier::{concept_accuracy, ClassifierConfig, EvalClassifier};
pub use distance::{energy_distance, median_bandwidth, mmd_rbf, rsgr, sgr, similarity, SimilarityMetric};
pub use report::{similarity_curve, smooth, ReportRow, SimilarityReport, EVAL_SAMPLES, REPORT_HEADER};
