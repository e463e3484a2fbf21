//! Minimal deterministic network core.
//!
//! There is no autodiff graph: every layer exposes a forward function and a
//! matching backward function, and architectures compose them explicitly.
//! All layer functions take batched tensors (`[N, C, H, W]` for feature maps,
//! `[N, F]` for vectors) and are generic over [`Real`] so the same code runs
//! in 32-bit for training and in 64-bit for gradient checks.

mod activation;
mod adam;
mod conv;
mod dense;
mod gemm;
mod gradcheck;
mod init;
mod spec;
mod tensor;

pub use activation::{leaky_relu, leaky_relu_backward, leaky_relu_inplace, LEAKY_SLOPE};
pub use adam::{adam_step, AdamState};
pub use conv::{
    conv2d, conv2d_backward, pointwise_conv, pointwise_conv_backward, tconv2d, tconv2d_backward,
    ConvGrads, KERNEL, PADDING, STRIDE,
};
pub use dense::{dense, dense_backward, DenseGrads};
pub use gradcheck::{grad_check, grad_check_with_floor, GradCheckReport};
pub use init::glorot_uniform;
pub use spec::{LayerKind, LayerSpec, Padding};
pub use tensor::{Real, Tensor};
