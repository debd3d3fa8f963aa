//! Computation graph: an append-only list of operation records.
//!
//! Nodes are appended in topological order, so evaluation is a single
//! forward sweep over the node list. The backward pass (see
//! [`Graph::gradient`]) appends further nodes to the same list, which is
//! what makes gradients differentiable again.

use std::borrow::Cow;
use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use crate::custom::CustomOp;
use crate::error::{GraphError, Result};
use crate::scalar::Scalar;
use crate::tensor::{numel, Tensor};

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Debug for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "%{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LeafKind {
    /// Trainable weights.
    Param,
    /// Data fed in per evaluation.
    Input,
}

#[derive(Clone, Debug)]
pub(crate) enum Op<T: Scalar> {
    Leaf(LeafKind),
    Const(Tensor<T>),
    MatMul {
        a: NodeId,
        b: NodeId,
        trans_a: bool,
        trans_b: bool,
    },
    AddBias(NodeId, NodeId),
    SumRows(NodeId),
    BroadcastRows(NodeId, usize),
    SumCols(NodeId),
    BroadcastCols(NodeId, usize),
    Sum(NodeId),
    Broadcast(NodeId),
    Reshape(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Scale(NodeId, T),
    AddScalar(NodeId, T),
    Elu(NodeId),
    /// `order`-th derivative of elu.
    EluDeriv(NodeId, u32),
    Sigmoid(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Sqrt(NodeId),
    Square(NodeId),
    Abs(NodeId),
    Sign(NodeId),
    StopGradient(NodeId),
    RowMax(NodeId),
    PickCols(NodeId, Arc<[usize]>),
    ScatterCols(NodeId, Arc<[usize]>, usize),
    Custom {
        op: Arc<dyn CustomOp<T>>,
        inputs: Vec<NodeId>,
    },
    CustomVjp {
        op: Arc<dyn CustomOp<T>>,
        inputs: Vec<NodeId>,
        output: NodeId,
        grad: NodeId,
        index: usize,
    },
}

impl<T: Scalar> Op<T> {
    pub(crate) fn inputs(&self) -> Vec<NodeId> {
        use Op::*;
        match self {
            Leaf(_) | Const(_) => Vec::new(),
            MatMul { a, b, .. } => vec![*a, *b],
            AddBias(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) => vec![*a, *b],
            SumRows(x)
            | BroadcastRows(x, _)
            | SumCols(x)
            | BroadcastCols(x, _)
            | Sum(x)
            | Broadcast(x)
            | Reshape(x)
            | Scale(x, _)
            | AddScalar(x, _)
            | Elu(x)
            | EluDeriv(x, _)
            | Sigmoid(x)
            | Exp(x)
            | Log(x)
            | Sqrt(x)
            | Square(x)
            | Abs(x)
            | Sign(x)
            | StopGradient(x)
            | RowMax(x)
            | PickCols(x, _)
            | ScatterCols(x, _, _) => vec![*x],
            Custom { inputs, .. } => inputs.clone(),
            CustomVjp {
                inputs,
                output,
                grad,
                ..
            } => {
                let mut v = inputs.clone();
                v.push(*output);
                v.push(*grad);
                v
            }
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Node<T: Scalar> {
    pub(crate) op: Op<T>,
    pub(crate) shape: Vec<usize>,
}

/// Leaf values supplied to [`Graph::evaluate`].
#[derive(Clone, Debug, Default)]
pub struct Bindings<T> {
    values: HashMap<NodeId, Tensor<T>>,
}

impl<T: Scalar> Bindings<T> {
    pub fn new() -> Self {
        Self {
            values: HashMap::new(),
        }
    }

    pub fn bind(&mut self, leaf: NodeId, value: Tensor<T>) -> &mut Self {
        self.values.insert(leaf, value);
        self
    }

    pub fn with(mut self, leaf: NodeId, value: Tensor<T>) -> Self {
        self.values.insert(leaf, value);
        self
    }

    pub fn get(&self, leaf: NodeId) -> Option<&Tensor<T>> {
        self.values.get(&leaf)
    }
}

#[derive(Clone, Debug, Default)]
pub struct Graph<T: Scalar> {
    pub(crate) nodes: Vec<Node<T>>,
}

fn mismatch(op: &'static str, detail: String) -> GraphError {
    GraphError::ShapeMismatch { op, detail }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: NodeId) -> Result<&[usize]> {
        self.node(id).map(|n| n.shape.as_slice())
    }

    pub fn leaf_kind(&self, id: NodeId) -> Option<LeafKind> {
        match self.nodes.get(id.0).map(|n| &n.op) {
            Some(Op::Leaf(kind)) => Some(*kind),
            _ => None,
        }
    }

    pub(crate) fn node(&self, id: NodeId) -> Result<&Node<T>> {
        self.nodes.get(id.0).ok_or(GraphError::UnknownNode(id))
    }

    pub(crate) fn push(&mut self, op: Op<T>, shape: Vec<usize>) -> NodeId {
        self.nodes.push(Node { op, shape });
        NodeId(self.nodes.len() - 1)
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<Vec<usize>> {
        let (sa, sb) = (self.shape(a)?, self.shape(b)?);
        if sa != sb {
            return Err(mismatch(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(sa.to_vec())
    }

    fn matrix_dims(&self, op: &'static str, x: NodeId) -> Result<(usize, usize)> {
        match *self.shape(x)? {
            [r, c] => Ok((r, c)),
            ref s => Err(mismatch(op, format!("expected a matrix, got {s:?}"))),
        }
    }

    fn vector_len(&self, op: &'static str, x: NodeId) -> Result<usize> {
        match *self.shape(x)? {
            [n] => Ok(n),
            ref s => Err(mismatch(op, format!("expected a vector, got {s:?}"))),
        }
    }

    fn unary(&mut self, x: NodeId, make: impl FnOnce(NodeId) -> Op<T>) -> Result<NodeId> {
        let shape = self.shape(x)?.to_vec();
        Ok(self.push(make(x), shape))
    }

    // ---- leaves -------------------------------------------------------

    pub fn param(&mut self, shape: Vec<usize>) -> NodeId {
        self.push(Op::Leaf(LeafKind::Param), shape)
    }

    pub fn input(&mut self, shape: Vec<usize>) -> NodeId {
        self.push(Op::Leaf(LeafKind::Input), shape)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        let shape = value.shape().to_vec();
        self.push(Op::Const(value), shape)
    }

    pub fn scalar_constant(&mut self, value: f64) -> NodeId {
        self.constant(Tensor::scalar(T::of(value)))
    }

    // ---- linear algebra ----------------------------------------------

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.matmul_t(a, b, false, false)
    }

    /// `op(a) · op(b)` where `op` transposes when the flag is set.
    pub fn matmul_t(
        &mut self,
        a: NodeId,
        b: NodeId,
        trans_a: bool,
        trans_b: bool,
    ) -> Result<NodeId> {
        let (ar, ac) = self.matrix_dims("matmul", a)?;
        let (br, bc) = self.matrix_dims("matmul", b)?;
        let (m, ka) = if trans_a { (ac, ar) } else { (ar, ac) };
        let (kb, n) = if trans_b { (bc, br) } else { (br, bc) };
        if ka != kb {
            return Err(mismatch(
                "matmul",
                format!("inner dimensions {ka} and {kb} differ"),
            ));
        }
        Ok(self.push(
            Op::MatMul {
                a,
                b,
                trans_a,
                trans_b,
            },
            vec![m, n],
        ))
    }

    /// Adds a `[n]` bias to every row of an `[m, n]` matrix.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (m, n) = self.matrix_dims("add_bias", x)?;
        let bn = self.vector_len("add_bias", bias)?;
        if bn != n {
            return Err(mismatch("add_bias", format!("bias {bn} vs width {n}")));
        }
        Ok(self.push(Op::AddBias(x, bias), vec![m, n]))
    }

    /// `x · wᵀ + b` for `x: [m, in]`, `w: [out, in]`, `b: [out]`.
    pub fn affine(&mut self, x: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        let xw = self.matmul_t(x, weight, false, true)?;
        self.add_bias(xw, bias)
    }

    // ---- reductions and broadcasts -----------------------------------

    /// `[m, n] -> [n]`, summing over rows.
    pub fn sum_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let (_, n) = self.matrix_dims("sum_rows", x)?;
        Ok(self.push(Op::SumRows(x), vec![n]))
    }

    /// `[n] -> [rows, n]`.
    pub fn broadcast_rows(&mut self, x: NodeId, rows: usize) -> Result<NodeId> {
        let n = self.vector_len("broadcast_rows", x)?;
        Ok(self.push(Op::BroadcastRows(x, rows), vec![rows, n]))
    }

    /// `[m, n] -> [m]`, summing each row.
    pub fn sum_cols(&mut self, x: NodeId) -> Result<NodeId> {
        let (m, _) = self.matrix_dims("sum_cols", x)?;
        Ok(self.push(Op::SumCols(x), vec![m]))
    }

    /// `[m] -> [m, cols]`.
    pub fn broadcast_cols(&mut self, x: NodeId, cols: usize) -> Result<NodeId> {
        let m = self.vector_len("broadcast_cols", x)?;
        Ok(self.push(Op::BroadcastCols(x, cols), vec![m, cols]))
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        self.node(x)?;
        Ok(self.push(Op::Sum(x), Vec::new()))
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        let n = numel(self.shape(x)?);
        if n == 0 {
            return Err(mismatch("mean", "empty tensor".into()));
        }
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Expands a single-element tensor to `shape`.
    pub fn broadcast(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let s = self.shape(x)?;
        if numel(s) != 1 {
            return Err(mismatch("broadcast", format!("source {s:?} is not scalar")));
        }
        Ok(self.push(Op::Broadcast(x), shape))
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let s = self.shape(x)?;
        if numel(s) != numel(&shape) {
            return Err(mismatch("reshape", format!("{s:?} -> {shape:?}")));
        }
        Ok(self.push(Op::Reshape(x), shape))
    }

    // ---- elementwise --------------------------------------------------

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let shape = self.same_shape("add", a, b)?;
        Ok(self.push(Op::Add(a, b), shape))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let shape = self.same_shape("sub", a, b)?;
        Ok(self.push(Op::Sub(a, b), shape))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let shape = self.same_shape("mul", a, b)?;
        Ok(self.push(Op::Mul(a, b), shape))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let shape = self.same_shape("div", a, b)?;
        Ok(self.push(Op::Div(a, b), shape))
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> Result<NodeId> {
        self.unary(x, |x| Op::Scale(x, T::of(factor)))
    }

    pub fn add_scalar(&mut self, x: NodeId, value: f64) -> Result<NodeId> {
        self.unary(x, |x| Op::AddScalar(x, T::of(value)))
    }

    pub fn neg(&mut self, x: NodeId) -> Result<NodeId> {
        self.scale(x, -1.0)
    }

    pub fn elu(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, Op::Elu)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, Op::Sigmoid)
    }

    pub fn exp(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, Op::Exp)
    }

    pub fn log(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, Op::Log)
    }

    pub fn sqrt(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, Op::Sqrt)
    }

    pub fn square(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, Op::Square)
    }

    pub fn abs(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, Op::Abs)
    }

    /// Elementwise sign; has zero derivative everywhere.
    pub fn sign(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, Op::Sign)
    }

    /// Identity in the forward pass, blocks gradient flow.
    pub fn stop_gradient(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, Op::StopGradient)
    }

    /// `[m, n] -> [m]` row maxima. Not differentiated (acts as a constant).
    pub fn row_max(&mut self, x: NodeId) -> Result<NodeId> {
        let (m, _) = self.matrix_dims("row_max", x)?;
        Ok(self.push(Op::RowMax(x), vec![m]))
    }

    /// `out[r] = x[r, cols[r]]`.
    pub fn pick_cols(&mut self, x: NodeId, cols: &[usize]) -> Result<NodeId> {
        let (m, n) = self.matrix_dims("pick_cols", x)?;
        if cols.len() != m {
            return Err(mismatch(
                "pick_cols",
                format!("{} indices for {m} rows", cols.len()),
            ));
        }
        if let Some(&c) = cols.iter().find(|&&c| c >= n) {
            return Err(mismatch(
                "pick_cols",
                format!("column {c} out of range {n}"),
            ));
        }
        Ok(self.push(Op::PickCols(x, cols.into()), vec![m]))
    }

    /// Inverse of [`Graph::pick_cols`]: a `[m, width]` matrix of zeros with
    /// `x[r]` placed at `(r, cols[r])`.
    pub fn scatter_cols(&mut self, x: NodeId, cols: &[usize], width: usize) -> Result<NodeId> {
        let m = self.vector_len("scatter_cols", x)?;
        if cols.len() != m || cols.iter().any(|&c| c >= width) {
            return Err(mismatch("scatter_cols", "bad column indices".into()));
        }
        Ok(self.push(Op::ScatterCols(x, cols.into(), width), vec![m, width]))
    }

    pub fn custom(&mut self, op: Arc<dyn CustomOp<T>>, inputs: &[NodeId]) -> Result<NodeId> {
        let shapes = inputs
            .iter()
            .map(|&i| self.shape(i).map(|s| s.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&[usize]> = shapes.iter().map(|s| s.as_slice()).collect();
        let shape = op.output_shape(&refs)?;
        Ok(self.push(
            Op::Custom {
                op,
                inputs: inputs.to_vec(),
            },
            shape,
        ))
    }

    // ---- composites ---------------------------------------------------

    /// `sqrt(sum(x²))`. Not differentiable at the origin.
    pub fn l2_norm(&mut self, x: NodeId) -> Result<NodeId> {
        let sq = self.square(x)?;
        let s = self.sum(sq)?;
        self.sqrt(s)
    }

    /// Row-wise log-softmax of an `[m, n]` matrix, shifted by the row max
    /// for stability.
    pub fn log_softmax_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let (_, n) = self.matrix_dims("log_softmax_rows", x)?;
        let max = self.row_max(x)?;
        let max_b = self.broadcast_cols(max, n)?;
        let shifted = self.sub(x, max_b)?;
        let e = self.exp(shifted)?;
        let z = self.sum_cols(e)?;
        let logz = self.log(z)?;
        let logz_b = self.broadcast_cols(logz, n)?;
        self.sub(shifted, logz_b)
    }

    pub fn softmax_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let ls = self.log_softmax_rows(x)?;
        self.exp(ls)
    }

    // ---- evaluation ---------------------------------------------------

    pub fn evaluate(&self, root: NodeId, bindings: &Bindings<T>) -> Result<Tensor<T>> {
        Ok(self
            .evaluate_many(&[root], bindings)?
            .pop()
            .expect("one root"))
    }

    /// Evaluates several nodes in one sweep, sharing intermediate values.
    pub fn evaluate_many(
        &self,
        roots: &[NodeId],
        bindings: &Bindings<T>,
    ) -> Result<Vec<Tensor<T>>> {
        for &r in roots {
            self.node(r)?;
        }
        for (&id, value) in &bindings.values {
            match self.node(id)?.op {
                Op::Leaf(_) => {}
                _ => return Err(GraphError::NotALeaf(id)),
            }
            let expected = &self.nodes[id.0].shape;
            if value.shape() != expected.as_slice() {
                return Err(GraphError::BindingShape {
                    node: id,
                    expected: expected.clone(),
                    got: value.shape().to_vec(),
                });
            }
        }
        let Some(last) = roots.iter().map(|r| r.0).max() else {
            return Ok(Vec::new());
        };

        let mut needed = vec![false; last + 1];
        let mut stack: Vec<usize> = roots.iter().map(|r| r.0).collect();
        while let Some(i) = stack.pop() {
            if needed[i] {
                continue;
            }
            needed[i] = true;
            stack.extend(self.nodes[i].op.inputs().into_iter().map(|n| n.0));
        }

        let mut values: Vec<Option<Cow<'_, Tensor<T>>>> = vec![None; last + 1];
        for i in 0..=last {
            if !needed[i] {
                continue;
            }
            let node = &self.nodes[i];
            let value = match &node.op {
                Op::Leaf(_) => Cow::Borrowed(
                    bindings
                        .get(NodeId(i))
                        .ok_or(GraphError::UnboundLeaf(NodeId(i)))?,
                ),
                Op::Const(t) => Cow::Borrowed(t),
                op => {
                    let get = |id: NodeId| -> &Tensor<T> {
                        values[id.0].as_deref().expect("inputs precede their users")
                    };
                    Cow::Owned(crate::kernels::compute(op, &node.shape, get))
                }
            };
            values[i] = Some(value);
        }
        Ok(roots
            .iter()
            .map(|r| values[r.0].as_deref().expect("root evaluated").clone())
            .collect())
    }
}
