//! Training loop and evaluation metrics.

mod evaluate;
pub mod metrics;
mod optim;
mod trainer;

pub use evaluate::{evaluate, predict_windows, score, Evaluation, TargetScale, WindowPrediction};
pub use metrics::{
    aggregate, mae, mse_loss, rmse, spearman, threshold_metrics, LocationMetrics, MetricStat, MetricsReport,
    SeedMetrics, ThresholdScores, METRIC_NAMES,
};
pub use optim::AdamW;
pub use trainer::{batch_gradient, first_non_finite, mean_loss, train, EpochRecord, TrainConfig, TrainOutcome};
