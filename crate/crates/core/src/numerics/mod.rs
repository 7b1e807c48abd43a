//! Dense tensors, a reverse-mode tape, and the layers the codec is built from.

pub mod gradcheck;
mod graph;
pub(crate) mod kernels;
pub mod layers;
mod params;
mod tensor;

pub use gradcheck::{grad_check, grad_check_in, grad_check_params, GradCheck};
pub use graph::{CustomBackward, Gradients, Graph, Var};
pub use params::{ParamGrads, ParamId, ParamStore, Parameter};
pub use tensor::Tensor;
