//! Structured compression of small neural networks guided by information-flow
//! divergence: per-unit filter pruning under an accuracy budget, followed by
//! flow-ranked layer truncation with identity or projection replacement.

pub mod autodiff;
pub mod data;
pub mod divergence;
pub mod error;
pub mod io;
pub mod models;
pub mod network;
pub mod pipeline;
pub mod pruning;
pub mod tensor;
pub mod truncation;
pub mod trainer;

pub use error::{Error, Result};
pub use network::{Activation, ActivationTrace, AttentionHead, Layer, LayerKind, Network, PruningMask};
pub use tensor::Tensor;
