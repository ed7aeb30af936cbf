//! Reverse-mode automatic differentiation over dense row-major tensors.

mod attention;
mod scalar;
mod tape;
mod tensor;

pub use attention::AttentionIndex;
pub use scalar::{Dual, Scalar};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

pub mod check;
