//! Networks with hand-rolled forward and backward passes.
//!
//! Kernels are generic over [`crate::scalar::Scalar`], so the same code
//! runs f32 training, f64 gradient checks and dual-number tangent
//! propagation. No layer couples examples within a batch; this keeps
//! per-example gradients and chunked evaluation exact.

mod layers;
mod network;
mod optim;

pub use layers::{Layer, INSTANCE_NORM_EPS};
pub use network::{
    convnet, gather_rows, generator, input_grad_tangent, lenet5, loss_and_grad, mlp,
    per_example_grads, predict, softmax_ce_sum, softmax_cross_entropy, Arch, Network,
};
pub use optim::{Adam, SgdMomentum};
