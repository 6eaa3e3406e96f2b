//! Differentiable sequence recognition: a reverse-mode tensor engine, dynamic
//! context-aware convolution, CTC alignment and subnet-regularized CTC training.

pub mod config;
pub mod ctc;
pub mod dcac;
pub mod error;
pub mod instrument;
pub mod nn;
pub mod pipeline;
pub mod scalar;
pub mod sr_ctc;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Graph32 = tensor::Graph<f32>;
pub type Graph64 = tensor::Graph<f64>;
