//! Dense `f64` tensors with hand-written backward passes.
//!
//! Networks in this crate are fixed, so each one wires its forward and
//! backward calls explicitly instead of recording a tape. Every public
//! differentiable operation has a matching `*_backward` that takes the
//! forward inputs (and cached outputs) plus the upstream gradient.

mod gradcheck;
mod ops;
mod params;
mod tensor;

pub use gradcheck::{finite_difference, grad_check, relative_error, REL_ERR_FLOOR};
pub use ops::{
    conv1d_maxpool, conv1d_maxpool_backward, dot, elementwise, elementwise_backward, matmul,
    matmul_backward, matvec, matvec_t, sigmoid, softmax, softmax_backward, softmax_slice,
    ConvFilter, Elementwise, PoolCache,
};
pub use params::{sgd_step, Direction, ParamStore};
pub use tensor::Tensor;
