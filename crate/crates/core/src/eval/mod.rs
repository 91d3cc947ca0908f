//! Metrics, the token-selection study and the benchmark runner.

pub mod benchmark;
pub mod metrics;
pub mod selection;

pub use benchmark::{
    benchmark, read_metric_csv, sample_score, score_corpus, BenchmarkOptions, Method, MetricReport,
    MetricRow, METRIC_CSV_HEADER,
};
pub use metrics::{auroc, ece, ece_from_confidence, scores_to_confidence};
pub use selection::{token_selection_curve, SelectionCriterion, SelectionPoint};
