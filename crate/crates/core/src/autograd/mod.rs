//! Minimal reverse-mode automatic differentiation over dense row-major tensors.
//!
//! The graph is rebuilt for every batch. Operations are coarse (a fused linear layer,
//! fused attention, fused layer norm) so the tape stays short and the backward pass
//! can skip work for frozen leaves.

mod graph;
mod tensor;

pub use graph::{Grads, Graph, Var};
pub use tensor::{Real, Tensor};

#[cfg(test)]
mod tests;
