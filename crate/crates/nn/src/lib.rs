//! Minimal `f64` tensors with tape-based reverse-mode differentiation,
//! convolution layers, Adam, and a tensor archive format.
//!
//! Everything is single-threaded and deterministic: the same inputs and the
//! same seeds always produce bit-identical outputs.

pub mod archive;
pub mod conv;
pub mod gemm;
pub mod gradcheck;
pub mod graph;
pub mod ops;
pub mod params;
pub mod tensor;

pub use archive::Archive;
pub use graph::{BackwardFn, Gradients, Graph, Var};
pub use params::{clip_global_norm, Adam, Bound, Constraint, LayerEntry, ParamId, ParamStore};
pub use tensor::Tensor;

/// Errors surfaced by parameter loading and archive I/O.
#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed archive: {0}")]
    Format(String),
    #[error("layer plan mismatch: {0}")]
    PlanMismatch(String),
}
