//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Graph`] records every operation in creation order. Leaves are either
//! trainable ([`Graph::param`]) or constant ([`Graph::constant`]); gradients
//! only flow into nodes that depend on a trainable leaf.

mod graph;
mod tensor;

pub use graph::{Gradients, Graph, NodeId};
pub use tensor::Tensor;

pub(crate) use graph::{fraction, quantile_huber_value, softplus};
pub(crate) use tensor::gemm;

/// Huber loss: `u²/2` for `|u| ≤ kappa`, `kappa·(|u| − kappa/2)` beyond.
pub fn huber(u: f64, kappa: f64) -> f64 {
    graph::huber(u, kappa)
}
