//! Numerical kernels with explicit backward passes.

pub mod affine;
pub mod conv;
pub mod pointwise;
pub mod pool;
pub mod resize;

pub use affine::{affine_grad, matmul_affine, AffineGrads};
pub use conv::{conv2d, conv2d_grad, ConvGeometry, ConvGrads};
pub use pointwise::{add, hadamard, pointwise, pointwise_grad, relu, sigmoid, sub, tanh, Pointwise};
pub use pool::{maxpool2d, maxpool2d_grad, PoolIndex};
pub use resize::resize_bilinear;
