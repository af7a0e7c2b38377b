//! Learned lossy compression for single-channel solar EUV images.
//!
//! The crate bundles the model (attention-augmented transforms, hyperprior
//! and channel-sliced entropy model), a bit-exact rANS bitstream, training,
//! rate-distortion evaluation, and a coronal-hole segmentation harness that
//! measures how compression affects downstream analysis.

// Argument checks are written as `!(x > 0.0)` on purpose so NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attention;
pub mod codec;
pub mod data;
pub mod entropy;
pub mod error;
pub mod evaluation;
pub mod fits;
pub mod gdn;
pub mod layers;
pub mod model;
pub mod objectives;
pub mod quantization;
pub mod segmentation;
pub mod synthetic;
pub mod training;
pub mod transforms;

pub use error::{Result, SnicError};
pub use model::CompressionModel;
pub use transforms::ModelConfig;
