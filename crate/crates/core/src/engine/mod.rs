//! Tensors, seeded randomness and differentiation.

mod fd;
mod hyperdual;
mod rng;
pub(crate) mod tape;
mod tensor;

pub use fd::{compare_gradients, finite_diff_gradient, finite_diff_second, max_rel_error, GradDiff};
pub use hyperdual::{hyperdual_d2, hyperdual_grad_laplacian, HyperDual, Scalar};
pub use rng::Rng;
pub use tape::{Gradients, Tape, Var};
pub use tensor::{BinOp, Tensor};
