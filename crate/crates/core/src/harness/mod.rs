//! Training configuration, the model and objective, the training loop and
//! evaluation.

pub mod config;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod suite;
pub mod train;

pub use config::{AdamConfig, TrainConfig, Variant};
pub use metrics::{
    compute_metrics, evaluate, group_bounds, uncertainty_groups, Calibration, ClassMetrics, Group,
    GroupMetrics, MetricsReport,
};
pub use model::{objective, Batch, GraphContext, Model, ModelVars, Predictions, StepTerms};
pub use optim::Adam;
pub use suite::{gradient_suite, SuiteEntry};
pub use train::{train, train_with, EpochRecord, Objective, TrainOutcome};
