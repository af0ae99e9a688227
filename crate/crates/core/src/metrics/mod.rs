//! Event-conditioned error scoring and the statistics behind the reports.

pub mod curves;
pub mod scoring;
pub mod stats;
pub mod subject;

pub use curves::{cdf_curve, cep_curve, CepAccumulator, linear_grid, saccade_progress_curve, ProgressAccumulator, ProgressBin};
pub use scoring::{cep_intervals, cep_mask, errors_in, score_run, ErrorMetric, ErrorRecord, EventClass};
pub use stats::{bonferroni, kendall_w, median, quantile, spearman};
pub use subject::{
    concordance, correlate_features, subject_stats, CorrelationResult, ErrorColumn, FeatureColumn, SubjectStats,
    SubjectSummary,
};
