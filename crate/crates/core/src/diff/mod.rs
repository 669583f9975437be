//! Reverse-mode differentiation over dense `f64` matrices.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{grad_check, grad_check_with, GradCheck, GradCheckOptions};
pub use graph::{Gradients, Graph, Var};
pub use tensor::Tensor;
