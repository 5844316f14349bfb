//! Classification metrics, calibration, per-position accuracy and router usage.

mod calibration;
mod metrics;
mod position;
mod router;

pub use calibration::{
    confidence_bin, ece, quantile_bins, reliability_svg, CalibrationReport, ConfidenceBin, ReliabilityBin,
    CONFIDENCE_BINS, QUANTILE_BINS,
};
pub use metrics::{
    aggregate_report, auprc, auroc, classification_metrics, metric_report, Aggregate, AggregateReport,
    ClassificationMetrics, MetricReport, DEFAULT_THRESHOLD,
};
pub use position::{default_window, per_position_accuracy, PositionOutcome, PositionRow};
pub use router::router_utilization;
