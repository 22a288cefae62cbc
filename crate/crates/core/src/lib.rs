//! Single-image UV texture estimation for an articulated mannequin.
//!
//! The crate contains a small reverse-mode autodiff engine ([`tensor`]),
//! the differentiable building blocks built on it ([`nn`]), a fixed-geometry
//! rasterizer with differentiable texture lookup ([`render`]), the texture
//! network ([`model`]), its training objectives ([`losses`]), a procedural
//! multi-view dataset ([`data`]), evaluation ([`metrics`]) and the training
//! and inference drivers ([`harness`]).
//!
//! Everything differentiable is generic over [`Scalar`]; the aliases below
//! name the 64-bit instantiation used by gradient checks and the 32-bit one
//! used for training.

// Tape ops return `Result` and cannot implement the operator traits;
// negated float comparisons deliberately reject NaN.
#![allow(clippy::should_implement_trait, clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod render;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Tape64 = tensor::Tape<f64>;
pub type ParamStore64 = tensor::ParamStore<f64>;
pub type Model32 = model::Model<f32>;
pub type Trainer32 = harness::Trainer<f32>;
