//! Musical onset detection from predicted time-to-event (TTE) and
//! time-since-event (TSE) distributions.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); aliases
//! for both precisions are exported at the crate root. Training runs in
//! `f64`; a trained model can be cast to `f32` for inference.

pub mod datagen;
pub mod dist;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod inference;
pub mod io;
pub mod pipeline;
pub mod predictor;
pub mod scalar;
pub mod targets;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type ParamStore32 = tensor::ParamStore<f32>;
pub type ParamStore64 = tensor::ParamStore<f64>;
pub type DistParams32 = dist::DistParams<f32>;
pub type DistParams64 = dist::DistParams<f64>;
