//! Violent-video classification with a CNN backbone and a convolutional LSTM
//! aggregator, built on hand-written kernels with explicit backward passes.
//!
//! Module map:
//!
//! * [`tensor`], [`kernels`]: dense tensors, convolution, pooling, pointwise
//!   maps, affine maps and resizing, each with an exact backward pass.
//! * [`layers`]: stateful layers with Xavier initialization and batch norm.
//! * [`recurrent`]: the ConvLSTM cell and the fully-connected LSTM baseline.
//! * [`model`]: model configuration, assembly, parameter audit and the
//!   weight archive format.
//! * [`pipeline`]: manifests, frame sampling, differencing, normalization,
//!   augmentation and fold construction.
//! * [`train`]: loss, RMSprop, the training loop, evaluation and the
//!   gradient-check harness.

pub mod error;
pub mod kernels;
pub mod layers;
pub mod model;
pub mod par;
pub mod pipeline;
pub mod recurrent;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::{Scalar, Tensor};
