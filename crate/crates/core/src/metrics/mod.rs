//! Evaluation: confusion-based metrics, AUROC, per-slide averaging,
//! metastasis detection rates and Welch's t-test.

mod aggregate;
mod auroc;
mod confusion;
mod regions;
mod report;
mod welch;

pub use aggregate::{aggregate, aggregate_seeds, AggregateMetrics, MetricSummary};
pub use auroc::auroc;
pub use confusion::{
    confusion, confusion_counts, evaluate_slide, mcc, precision, recall, specificity,
    ConfusionCounts, SlideMetrics,
};
pub use regions::{
    detection_rate, find_regions, ClassRate, DetectionRates, MetastasisRegion, SizeClass,
    SizeThresholds,
};
pub use report::{EvalReport, TABLE_HEADER};
pub use welch::{welch_t, WelchResult};
