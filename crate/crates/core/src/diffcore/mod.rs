//! Dense differentiable linear algebra: tensors, a recording graph with
//! reverse-mode gradients, parameter storage, Adam, and gradient checking.

mod adam;
mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use adam::{AdamState, BETA1, BETA2, EPSILON};
pub use gradcheck::{grad_check, GradCheck};
pub use graph::{masked_softmax_rows, softmax_rows, Activation, Graph, LinalgKind, Var};
pub use params::{ParamEntry, ParamId, ParamStore};
pub use tensor::Tensor;
