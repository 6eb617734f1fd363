//! Reverse-mode differentiation over a small, fixed set of tensor operations.
//!
//! A [`Graph`] is a tape: every operation appends a node whose parents are
//! already on the tape, so reverse insertion order is a valid topological
//! order for the backward sweep. Gradients of shared subexpressions
//! accumulate additively.

pub mod check;
mod conv;
mod graph;
mod norm;
mod tensor;

pub use conv::{conv2d, conv2d_backward, conv_transpose2d, conv_transpose2d_backward, PadMode, Padding};
pub use graph::{BatchStats, Gradients, Graph, NodeId, NormMode};
pub use norm::{BN_EPS, BN_MOMENTUM};
pub use tensor::Tensor4;

/// ELU with unit alpha.
#[inline]
pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}
