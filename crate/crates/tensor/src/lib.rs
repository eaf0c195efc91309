//! Minimal reverse-mode automatic differentiation over `ndarray`.
//!
//! A [`Graph`] records every operation applied to [`Var`] handles together
//! with a closure mapping the output gradient to the input gradients. The
//! operation set covers what the restoration network needs: dense and
//! transposed convolutions, flow-driven deformable convolution, backward
//! warping, bilinear resizing, batched matrix products and the usual
//! pointwise functions. Everything is generic over [`Float`] so the same code
//! runs in `f32` for training and `f64` for gradient checks.

mod conv;
mod elementwise;
mod float;
mod graph;
mod linalg;
mod reduce;
mod sampling;
mod shape;

pub mod gradcheck;

pub use float::Float;
pub use graph::{Gradients, Graph, Tensor, Var};
