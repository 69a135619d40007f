//! Dense `f64` tensors with reverse-mode differentiation.
//!
//! Graphs are built eagerly: every builder call evaluates its op and appends a
//! node. [`backward`] returns numeric parameter gradients of a scalar node;
//! [`grad_as_graph`] instead appends the gradient computation as new nodes,
//! which is what the gradient penalty needs since its value depends on an
//! input gradient and must itself be differentiated.

mod backward;
mod graph;
mod symbolic;
mod tensor;

pub use backward::{backward, GradientMap};
pub use graph::{Graph, LeafKind, NodeId, Op};
pub use symbolic::grad_as_graph;
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    RankMismatch {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },
    #[error("{op}: {msg}")]
    Domain { op: &'static str, msg: String },
    #[error("invalid tensor shape {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("shape {shape:?} does not hold {len} values")]
    LengthMismatch { shape: Vec<usize>, len: usize },
    #[error("differentiation root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("node {0} is not a leaf")]
    NotALeaf(usize),
    #[error("unknown node {0}")]
    UnknownNode(usize),
}
