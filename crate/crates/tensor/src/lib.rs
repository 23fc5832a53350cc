//! Dense tensors, reverse-mode autodiff, and Adam — just enough machinery to
//! train small convolutional classifiers and autoencoders deterministically
//! on a CPU.
//!
//! Everything is generic over [`Real`] (`f32` in production, `f64` for the
//! finite-difference oracle in tests). Layout is batch-first channel-last
//! `[B,H,W,C]`, row-major. All randomness flows through the explicit,
//! splittable [`Rng`], so equal seeds give bit-identical results
//! single-threaded.

pub mod adam;
pub mod conv;
pub mod error;
pub mod gemm;
pub mod gradcheck;
pub mod graph;
pub mod param;
pub mod real;
pub mod rng;
pub mod tensor;

pub use adam::{adam_step, AdamConfig};
pub use conv::Padding;
pub use error::{Result, TensorError};
pub use graph::{Graph, NodeId};
pub use param::Parameter;
pub use real::Real;
pub use rng::Rng;
pub use tensor::Tensor;
