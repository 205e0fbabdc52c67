//! The alternating optimization, its configuration, checkpoints, metrics
//! and sweeps.

mod checkpoint;
mod config;
mod metrics;
mod sweep;
mod trainer;

pub use checkpoint::Checkpoint;
pub use config::{apply_overrides, Hyperparams, ModelKind};
pub use metrics::{metrics_csv, metrics_json, write_metrics, METRICS_HEADER};
pub use sweep::{
    fit_prior, markov_projection, order_sweep, order_sweep_csv, run_search, OrderSweepOptions,
    OrderSweepReport, OrderSweepRow, SearchMode, SearchRun, SearchSpace,
};
pub use trainer::{
    train_ammi, train_bmmi, BatchRecord, EpochMetrics, EpochSums, Model, TrainState, Trainer,
};
