//! Reverse-mode automatic differentiation over a static graph of tensor ops.
//!
//! A [`Graph`] is built once and then evaluated any number of times by
//! independent [`Tape`]s. Each tape borrows its leaf tensors from a
//! [`Bindings`] map, caches every intermediate value during `forward`, and
//! replays the graph in reverse during `backward`. Graphs are immutable while
//! tapes exist, so one graph (and one set of parameters) can back many
//! concurrent tapes.

mod check;
pub(crate) mod kernels;
mod tape;

pub use check::{finite_difference_check, finite_difference_check_entries};
pub use tape::{eval, Bindings, Gradients, Tape};

use crate::tensor::Tensor;
use std::collections::HashMap;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum AutodiffError {
    #[error("node {node} ({op}): shape mismatch: {detail}")]
    Shape {
        node: NodeId,
        op: &'static str,
        detail: String,
    },
    #[error("leaf `{0}` is not bound")]
    UnboundLeaf(String),
    #[error("no leaf named `{0}` in the graph")]
    UnknownLeaf(String),
    #[error("leaf `{0}` does not require gradients")]
    NotDifferentiable(String),
    #[error("backward root {node} must be a scalar, got shape {shape:?}")]
    NonScalarRoot { node: NodeId, shape: Vec<usize> },
    #[error("tape has not been evaluated; call forward first")]
    NotEvaluated,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Stride and zero padding of a 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dParams {
    pub stride: usize,
    pub padding: usize,
}

/// The primitive catalog.
#[derive(Debug, Clone)]
pub enum Op {
    Leaf { name: String, requires_grad: bool },
    Constant(Tensor<f64>),
    /// `x [N,C,H,W]`, `w [O,C,kh,kw]`, optional `b [O]`.
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        params: Conv2dParams,
    },
    /// `x [N,C,H,W]`, `w [C,O,kh,kw]`, optional `b [O]`; adjoint of `Conv2d`.
    ConvTranspose2d {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        params: Conv2dParams,
    },
    /// Row-vector convention: `x [N,in] · w [in,out] + b [out]`.
    Dense {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
    },
    LeakyRelu { x: NodeId, slope: f64 },
    Sigmoid(NodeId),
    Exp(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Square(NodeId),
    Abs(NodeId),
    Scale { x: NodeId, factor: f64 },
    Offset { x: NodeId, value: f64 },
    Sum(NodeId),
    Mean(NodeId),
    Reshape { x: NodeId, shape: Vec<usize> },
    /// Columns `[start, start+len)` of the last axis.
    Narrow { x: NodeId, start: usize, len: usize },
    Clamp { x: NodeId, lo: f64, hi: f64 },
    /// Half-sample symmetric padding of the two spatial axes of an NCHW tensor.
    PadSymmetric { x: NodeId, pad: usize },
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf { .. } => "leaf",
            Op::Constant(_) => "constant",
            Op::Conv2d { .. } => "conv2d",
            Op::ConvTranspose2d { .. } => "conv_transpose2d",
            Op::Dense { .. } => "dense",
            Op::LeakyRelu { .. } => "leaky_relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Exp(_) => "exp",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Square(_) => "square",
            Op::Abs(_) => "abs",
            Op::Scale { .. } => "scale",
            Op::Offset { .. } => "offset",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Reshape { .. } => "reshape",
            Op::Narrow { .. } => "narrow",
            Op::Clamp { .. } => "clamp",
            Op::PadSymmetric { .. } => "pad_symmetric",
        }
    }

    pub fn parents(&self) -> Vec<NodeId> {
        match *self {
            Op::Leaf { .. } | Op::Constant(_) => vec![],
            Op::Conv2d { x, w, b, .. }
            | Op::ConvTranspose2d { x, w, b, .. }
            | Op::Dense { x, w, b } => {
                let mut p = vec![x, w];
                p.extend(b);
                p
            }
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => vec![a, b],
            Op::LeakyRelu { x, .. }
            | Op::Scale { x, .. }
            | Op::Offset { x, .. }
            | Op::Reshape { x, .. }
            | Op::Narrow { x, .. }
            | Op::Clamp { x, .. }
            | Op::PadSymmetric { x, .. } => vec![x],
            Op::Sigmoid(x) | Op::Exp(x) | Op::Square(x) | Op::Abs(x) | Op::Sum(x) | Op::Mean(x) => {
                vec![x]
            }
        }
    }
}

/// A directed acyclic graph of primitives. Nodes can only refer to nodes
/// created before them, so insertion order is a topological order.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Op>,
    leaves: HashMap<String, NodeId>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn op(&self, id: NodeId) -> &Op {
        &self.nodes[id.0]
    }

    pub fn leaf_id(&self, name: &str) -> Option<NodeId> {
        self.leaves.get(name).copied()
    }

    /// Names of all leaves that require gradients, in creation order.
    pub fn differentiable_leaves(&self) -> Vec<&str> {
        self.nodes
            .iter()
            .filter_map(|op| match op {
                Op::Leaf {
                    name,
                    requires_grad: true,
                } => Some(name.as_str()),
                _ => None,
            })
            .collect()
    }

    fn push(&mut self, op: Op) -> NodeId {
        for p in op.parents() {
            assert!(p.0 < self.nodes.len(), "parent {p} does not exist yet");
        }
        self.nodes.push(op);
        NodeId(self.nodes.len() - 1)
    }

    /// A named input bound at evaluation time.
    ///
    /// Panics if the name is already used; leaf names identify bindings.
    pub fn leaf(&mut self, name: &str, requires_grad: bool) -> NodeId {
        assert!(
            !self.leaves.contains_key(name),
            "duplicate leaf name `{name}`"
        );
        let id = self.push(Op::Leaf {
            name: name.to_string(),
            requires_grad,
        });
        self.leaves.insert(name.to_string(), id);
        id
    }

    pub fn constant(&mut self, value: Tensor<f64>) -> NodeId {
        self.push(Op::Constant(value))
    }

    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        params: Conv2dParams,
    ) -> Result<NodeId, AutodiffError> {
        if params.stride == 0 {
            return Err(AutodiffError::InvalidArgument(
                "conv2d stride must be positive".into(),
            ));
        }
        Ok(self.push(Op::Conv2d { x, w, b, params }))
    }

    pub fn conv_transpose2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        params: Conv2dParams,
    ) -> Result<NodeId, AutodiffError> {
        if params.stride == 0 {
            return Err(AutodiffError::InvalidArgument(
                "conv_transpose2d stride must be positive".into(),
            ));
        }
        Ok(self.push(Op::ConvTranspose2d { x, w, b, params }))
    }

    pub fn dense(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> NodeId {
        self.push(Op::Dense { x, w, b })
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> NodeId {
        self.push(Op::LeakyRelu { x, slope })
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Sigmoid(x))
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Exp(x))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul(a, b))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Div(a, b))
    }

    pub fn square(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Square(x))
    }

    pub fn abs(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Abs(x))
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        self.push(Op::Scale { x, factor })
    }

    pub fn offset(&mut self, x: NodeId, value: f64) -> NodeId {
        self.push(Op::Offset { x, value })
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Sum(x))
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Mean(x))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> NodeId {
        self.push(Op::Reshape {
            x,
            shape: shape.to_vec(),
        })
    }

    pub fn narrow(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        self.push(Op::Narrow { x, start, len })
    }

    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> NodeId {
        assert!(lo <= hi, "clamp bounds out of order");
        self.push(Op::Clamp { x, lo, hi })
    }

    pub fn pad_symmetric(&mut self, x: NodeId, pad: usize) -> NodeId {
        self.push(Op::PadSymmetric { x, pad })
    }
}
