//! Optimizers and the training loop.

mod adam;
mod train;

pub use adam::{Adam, Optimizer, Sgd};
pub use train::{train, Evaluation, MetricRow, Objective, RunRecord, TrainBudget};
