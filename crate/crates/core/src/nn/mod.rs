//! Multilayer perceptrons, Adam, and parameter checkpoints.

mod adam;
pub mod checkpoint;
mod mlp;

pub use adam::{clip_grad_norm, Adam, LrSchedule, ADAM_EPSILON};
pub use checkpoint::Checkpoint;
pub use mlp::{Activation, Mlp, MlpSpec};

use crate::autodiff::{Gradients, NodeId, Tensor};

/// Pulls the gradients of `leaves` (as returned by [`Mlp::forward_graph`]),
/// substituting zeros for leaves the output did not depend on.
pub fn collect_grads(grads: &mut Gradients, leaves: &[NodeId], net: &Mlp) -> Vec<Tensor> {
    leaves.iter().zip(net.params()).map(|(&id, p)| grads.take_or_zeros(id, p)).collect()
}
