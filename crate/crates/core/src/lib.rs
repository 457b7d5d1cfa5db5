//! Binary neural networks trained with recurrent bilinear optimization.
//!
//! Scale factors, weights and per-channel recurrent gains of every binary
//! layer are optimized jointly; inference of binary layers runs on packed
//! bits with XNOR and popcount.

pub mod bilinear;
pub mod checkpoint;
pub mod bench;
pub mod binarize;
pub mod data;
pub mod error;
pub mod model;
pub mod rbonn;
pub mod report;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type ScaleDiag32 = binarize::ScaleDiag<f32>;
pub type ScaleDiag64 = binarize::ScaleDiag<f64>;
pub type Network32 = model::Network<f32>;
pub type Network64 = model::Network<f64>;
