//! Classification metrics, ROC/AUC, throughput and the practicality score.

mod classification;
mod practicality;
mod roc;
mod throughput;

pub use classification::{confusion, per_class_metrics, ClassMetrics, ConfusionMatrix, MetricsReport};
pub use practicality::{
    practicality_score, ranked_csv, read_practicality_csv, read_practicality_file, MetricRow, PracticalityResult,
    PracticalityTable, ScoredRow, PRACTICALITY_WEIGHTS,
};
pub use roc::{roc_auc, roc_curve, AucReport, RocCurve};
pub use throughput::{average_fps, bench_model, percentile, BenchResult, TimingSample};
