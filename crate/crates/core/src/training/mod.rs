//! Optimization loop, evaluation metrics and the layer and data-scale sweeps.

mod adam;
mod metrics;
mod sweep;
mod train;

pub use adam::{Adam, BETA1, BETA2, EPSILON};
pub use metrics::{argmax, compute_metrics, roc_auc, MetricsReport};
pub use sweep::{scale_rows_to_csv, sweep_data_scale, sweep_layers, LayerCell, LayerGrid, ScaleRow};
pub use train::{evaluate, train, train_with, EpochLog, TrainConfig, TrainOutcome};
