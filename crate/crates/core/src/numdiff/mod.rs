//! Dense tensors with reverse-mode differentiation.

mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use gradcheck::{grad_check, grad_check_params, grad_check_two_scale, relative_error, GradCheckReport};
pub use graph::{sigmoid, softmax_in_place, Graph, Var, LAYER_NORM_EPS};
pub use params::{ParamId, ParamStore, Parameter};
pub use tensor::Tensor;
