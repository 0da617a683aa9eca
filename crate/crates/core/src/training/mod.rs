//! Optimizers, learning-rate schedule and the link-prediction training loop.

pub mod kg;
pub mod optim;
pub mod toy;

pub use kg::{
    evaluate_kg, init_kg_model, smoothed, train_kg, write_history_csv, KgTrainConfig, KgTrainResult, MetricRecord,
};
pub use optim::{clip_grad_norm, lr_at, OptimizerConfig, OptimizerState, ScheduleConfig};
pub use toy::{toy_kinship, write_splits};
