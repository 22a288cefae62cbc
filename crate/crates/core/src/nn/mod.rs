//! Differentiable building blocks on top of [`crate::tensor`].
//!
//! The operations are methods on [`Var`](crate::tensor::Var); the
//! parameterized wrappers in [`layers`] own their weights through a
//! [`ParamStore`](crate::tensor::ParamStore).

mod attention;
mod conv;
mod deform;
mod gram;
pub mod layers;
mod norm;
mod resample;
mod sample;

pub use attention::{attention_weights, MAX_TOKENS};
pub use conv::ConvGeometry;
pub use deform::{base_coordinate, flow_to_offsets, flow_to_raw_offsets, replication_kernel, OFFSET_CHANNELS, TAPS};
pub use norm::BatchStats;
pub use sample::identity_flow;
