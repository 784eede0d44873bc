//! Tensors, differentiable primitives, Adam, the seeded generator, and the
//! finite-difference checker.

mod adam;
mod gradcheck;
mod ops;
mod rng;
mod tensor;

pub use adam::{adam_step, AdamConfig, Param};
pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use ops::{
    bce_logit_scalar, bce_loss, bce_with_logits, layer_norm, layer_norm_backward,
    layer_norm_backward_into, layer_norm_into, sigmoid, sigmoid_scalar, NormStats, LAYER_NORM_EPS,
};
pub use rng::{stream, Rng};
pub use tensor::Tensor;
pub(crate) use tensor::{dot, matvec, matvec_t_acc, outer_acc};

/// Glorot-uniform initialization: `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot(dims: &[usize], fan_in: usize, fan_out: usize, rng: &mut Rng) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = dims.iter().product();
    let data = (0..n).map(|_| rng.uniform(-a, a)).collect();
    Tensor::from_vec(dims, data).expect("length matches dims")
}
