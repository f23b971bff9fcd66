//! Minimal reverse-mode network substrate: NCHW tensors, a handful of layers
//! with hand-written backward passes, and Adam.
//!
//! Everything is generic over [`Scalar`] so the same code trains in `f32` and
//! is gradient-checked in `f64`.

mod adam;
mod conv;
mod layers;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use conv::{col2im, im2col, ConvGeometry};
pub use layers::{Grads, Layer, LayerKind, Sequential, Tape};
pub use tensor::{gemm, Scalar, Tensor};
