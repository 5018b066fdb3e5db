//! Lightweight visual speech recognition building blocks.

pub mod architectures;
pub mod autograd;
pub mod blocks;
pub mod checkpoint;
pub mod config;
pub mod conv;
pub mod cost;
pub mod error;
pub mod gradcheck;
pub mod nn;
pub mod ops;
pub mod scalar;
pub mod tables;
pub mod tensor;
pub mod train;

pub use autograd::{Gradients, ParamId, Tape, Var};
pub use conv::{ConvAlgorithm, ConvDescriptor, PaddingMode};
pub use error::{Error, Result};
pub use scalar::{Precision, Scalar};
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
