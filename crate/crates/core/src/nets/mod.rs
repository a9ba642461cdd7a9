//! Baseline and host networks: MLP, RBF, conv stack, LSTM, and losses.

mod conv;
mod loss;
mod lstm;
mod mlp;
mod rbf;

pub use conv::{ConvShape, ConvStackParams, ConvStackVars, Head, HeadVars};
pub use loss::{accuracy, labels_of, loss, one_hot, tape_loss, LossKind};
pub use lstm::{LstmParams, LstmVars};
pub use mlp::{mlp_param_count, Activation, MlpParams, MlpVars};
pub use rbf::{rbf_to_gmnm, RbfParams, RbfVars};
