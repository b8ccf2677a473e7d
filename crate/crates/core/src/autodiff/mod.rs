//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Every operation records a node on the [`Graph`] of its operands. Backward
//! rules are written in terms of the same tensor operations, so asking
//! [`backward`] for `create_graph` gradients yields tensors that are part of
//! the graph and can be differentiated again (double backprop).
//!
//! ```
//! use saliency_core::autodiff::{grad, Array, Graph};
//!
//! let g = Graph::new();
//! let x = g.leaf(Array::scalar(2.0));
//! let y = x.mul(&x).mul(&x);
//! let dy = &grad(&y, &[&x], true)[0];
//! assert_eq!(dy.item(), 12.0);
//! let d2y = &grad(dy, &[&x], false)[0];
//! assert_eq!(d2y.item(), 12.0);
//! ```
//!
//! Routing decisions (relu masks, max selections, pooling argmaxes) are frozen
//! at forward time, so their second derivative is zero. Max ties resolve to
//! the lowest index.

mod array;
pub mod gradcheck;
mod graph;
mod ops;

use alloc::sync::Arc;

pub use array::Array;
pub use gradcheck::{finite_diff_check, finite_diff_check_many, GradCheck};
pub use graph::{backward, grad, GradRequest, Graph};
pub use ops::PAD;

pub(crate) use ops::sigmoid;

use graph::NodeRef;

/// A value, optionally attached to a node of a [`Graph`].
#[derive(Clone)]
pub struct Tensor {
    value: Arc<Array>,
    node: Option<NodeRef>,
}

impl Tensor {
    /// A detached tensor. Gradients with respect to it are always zero.
    pub fn constant(value: Array) -> Self {
        Self::constant_shared(Arc::new(value))
    }

    pub fn constant_shared(value: Arc<Array>) -> Self {
        Self { value, node: None }
    }

    pub fn scalar(value: f64) -> Self {
        Self::constant(Array::scalar(value))
    }

    pub fn value(&self) -> &Array {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn data(&self) -> &[f64] {
        self.value.data()
    }

    pub fn item(&self) -> f64 {
        self.value.item()
    }

    pub fn graph(&self) -> Option<&Graph> {
        self.node.as_ref().map(|n| &n.graph)
    }

    pub fn is_attached(&self) -> bool {
        self.node.is_some()
    }

    /// Same value, no graph.
    pub fn detach(&self) -> Tensor {
        Tensor::constant_shared(self.value.clone())
    }

    pub fn to_array(&self) -> Array {
        (*self.value).clone()
    }
}

impl core::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("data", &self.data())
            .field("node", &self.node.as_ref().map(|n| n.id))
            .finish()
    }
}
