use thiserror::Error;

use crate::graph::NodeId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("tensor data length {got} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, got: usize },

    #[error("leaf {0:?} is not bound")]
    UnboundLeaf(NodeId),

    #[error("binding for {node:?} has shape {got:?}, leaf declared {expected:?}")]
    BindingShape {
        node: NodeId,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("node {0:?} is not a leaf and cannot be bound")]
    NotALeaf(NodeId),

    #[error("node {0:?} is not part of this graph")]
    UnknownNode(NodeId),

    #[error("gradient requires a scalar output, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("operation `{0}` does not support differentiation of its backward pass")]
    HigherOrderUnsupported(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, GraphError>;
