//! Erasure and retention metrics, the ERB score, similarity inflection
//! curves and the loss ablation table.
//!
//! Samples are labelled by the world's exact Bayes classifier. Each concept
//! is sampled with a seed derived from the evaluation seed and its id, so two
//! models evaluated with the same config see the same chain noise.

mod ablation;
mod inflection;
mod metrics;

pub use ablation::{ablation_run, ablation_run_with, run_variant, AblationRow, AblationTable, SeedScore};
pub use inflection::{inflection_sweep, similarity_buckets, InflectionCurve, InflectionPoint};
pub use metrics::{
    accuracies, adjacency_accuracy, concept_accuracy, erasing_accuracy, erb, erb_report, evaluate,
    ErbReport, EvalConfig, EvaluationReport, RetainRow, DEFAULT_ETA,
};
