//! Recognition and retrieval metrics and the evaluation protocols.

mod metrics;
mod report;

pub use metrics::{
    average_precision, interpolated_pr, mean_average_precision, precision_recall_curve, ranking,
    top1_accuracy, MapSummary,
};
pub use report::{
    candidate_classes, default_fraction_grid, evaluate, fraction_sweep, ClassAp, EvalReport,
    SearchSpace, SweepRow,
};
