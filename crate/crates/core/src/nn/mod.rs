//! Dense numeric kernels with analytic gradients, Adam, and a
//! finite-difference gradient checker.

mod adam;
mod gradcheck;
mod ops;
mod tensor;

pub use adam::{adam_step, AdamConfig};
pub use gradcheck::{grad_check, relative_error, GradCheckOptions, GradCheckReport, Parameterized, Probe};
pub use ops::{
    affine, affine_backward, cosine_similarity, cosine_with_grad, relu, relu_backward, sigmoid,
    softmax_cross_entropy, softmax_rows, ParamSlot, COSINE_EPS,
};
pub(crate) use ops::{affine_forward, affine_grads, cross_entropy_sum, log_softmax, softmax_in_place};
pub use tensor::{dot, Tensor2};
