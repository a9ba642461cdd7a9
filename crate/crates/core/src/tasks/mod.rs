//! Experiment definitions: targets, losses and datasets.

mod dataset;
pub mod fit;
pub mod mnist;
pub mod pde;
pub mod supervised;
pub mod ts;

pub use dataset::{gather_rows, rows, Dataset};
pub use supervised::{Predictor, SupervisedObjective};
