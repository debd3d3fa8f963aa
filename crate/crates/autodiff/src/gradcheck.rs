//! Central finite-difference verification of analytic gradients.

use std::fmt;

use crate::error::{GraphError, Result};
use crate::graph::{Bindings, Graph, NodeId};
use crate::tensor::Tensor;

/// Relative error with denominator `max(|analytic|, |numeric|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckEntry {
    pub op: String,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub eps: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.max_rel_error)
            .fold(0.0, f64::max)
    }

    /// Merges another report, keeping the worst error per op name.
    pub fn merge(&mut self, other: GradCheckReport) {
        for e in other.entries {
            match self.entries.iter_mut().find(|x| x.op == e.op) {
                Some(x) => x.max_rel_error = x.max_rel_error.max(e.max_rel_error),
                None => self.entries.push(e),
            }
        }
        self.eps = self.eps.max(other.eps);
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            writeln!(f, "{:<24} {:.3e}", e.op, e.max_rel_error)?;
        }
        Ok(())
    }
}

/// Compares the analytic gradient of the scalar built by `build` against
/// central differences, perturbing every element of every input by `±eps`.
pub fn check_gradients<F>(
    name: &str,
    build: F,
    inputs: &[Tensor<f64>],
    eps: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId>,
{
    if !(eps > 0.0) {
        return Err(GraphError::InvalidArgument(format!(
            "eps must be positive, got {eps}"
        )));
    }
    let mut graph = Graph::new();
    let leaves: Vec<NodeId> = inputs
        .iter()
        .map(|t| graph.input(t.shape().to_vec()))
        .collect();
    let out = build(&mut graph, &leaves)?;
    let grads = graph.gradient(out, &leaves)?;

    let bind = |values: &[Tensor<f64>]| {
        let mut b = Bindings::new();
        for (&leaf, v) in leaves.iter().zip(values) {
            b.bind(leaf, v.clone());
        }
        b
    };
    let analytic = graph.evaluate_many(&grads, &bind(inputs))?;

    let mut worst: f64 = 0.0;
    let mut point = inputs.to_vec();
    for (k, grad) in analytic.iter().enumerate() {
        for j in 0..point[k].numel() {
            let orig = point[k].data()[j];
            point[k].data_mut()[j] = orig + eps;
            let plus = graph.evaluate(out, &bind(&point))?.item();
            point[k].data_mut()[j] = orig - eps;
            let minus = graph.evaluate(out, &bind(&point))?.item();
            point[k].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(relative_error(grad.data()[j], numeric));
        }
    }
    Ok(GradCheckReport {
        entries: vec![GradCheckEntry {
            op: name.to_string(),
            max_rel_error: worst,
        }],
        eps,
    })
}

/// Primitive operations covered by [`finite_diff_check`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckedOp {
    /// inputs: `x [m, in]`, `w [out, in]`, `b [out]`
    Affine,
    Elu,
    Sigmoid,
    Mean,
    Sum,
    Add,
    Sub,
    Mul,
    Div,
    Square,
    /// inputs must be positive
    Sqrt,
    /// input must be away from the origin
    L2Norm,
    Exp,
    /// inputs must be positive
    Log,
    /// inputs: two matrices with matching inner dimension
    MatMul,
    LogSoftmax,
}

impl CheckedOp {
    pub const ALL: [CheckedOp; 16] = [
        CheckedOp::Affine,
        CheckedOp::Elu,
        CheckedOp::Sigmoid,
        CheckedOp::Mean,
        CheckedOp::Sum,
        CheckedOp::Add,
        CheckedOp::Sub,
        CheckedOp::Mul,
        CheckedOp::Div,
        CheckedOp::Square,
        CheckedOp::Sqrt,
        CheckedOp::L2Norm,
        CheckedOp::Exp,
        CheckedOp::Log,
        CheckedOp::MatMul,
        CheckedOp::LogSoftmax,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CheckedOp::Affine => "affine",
            CheckedOp::Elu => "elu",
            CheckedOp::Sigmoid => "sigmoid",
            CheckedOp::Mean => "mean",
            CheckedOp::Sum => "sum",
            CheckedOp::Add => "add",
            CheckedOp::Sub => "sub",
            CheckedOp::Mul => "mul",
            CheckedOp::Div => "div",
            CheckedOp::Square => "square",
            CheckedOp::Sqrt => "sqrt",
            CheckedOp::L2Norm => "l2_norm",
            CheckedOp::Exp => "exp",
            CheckedOp::Log => "log",
            CheckedOp::MatMul => "matmul",
            CheckedOp::LogSoftmax => "log_softmax",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            CheckedOp::Affine => 3,
            CheckedOp::Add
            | CheckedOp::Sub
            | CheckedOp::Mul
            | CheckedOp::Div
            | CheckedOp::MatMul => 2,
            _ => 1,
        }
    }

    fn apply(self, g: &mut Graph<f64>, x: &[NodeId]) -> Result<NodeId> {
        match self {
            CheckedOp::Affine => g.affine(x[0], x[1], x[2]),
            CheckedOp::Elu => g.elu(x[0]),
            CheckedOp::Sigmoid => g.sigmoid(x[0]),
            CheckedOp::Mean => g.mean(x[0]),
            CheckedOp::Sum => g.sum(x[0]),
            CheckedOp::Add => g.add(x[0], x[1]),
            CheckedOp::Sub => g.sub(x[0], x[1]),
            CheckedOp::Mul => g.mul(x[0], x[1]),
            CheckedOp::Div => g.div(x[0], x[1]),
            CheckedOp::Square => g.square(x[0]),
            CheckedOp::Sqrt => g.sqrt(x[0]),
            CheckedOp::L2Norm => g.l2_norm(x[0]),
            CheckedOp::Exp => g.exp(x[0]),
            CheckedOp::Log => g.log(x[0]),
            CheckedOp::MatMul => g.matmul(x[0], x[1]),
            CheckedOp::LogSoftmax => g.log_softmax_rows(x[0]),
        }
    }
}

/// Fixed, uneven weights so that a weighted sum exercises every output
/// element with a distinct coefficient.
pub fn probe_weights(n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| 0.3 + 0.7 * ((k as f64 + 1.0) * 0.618_033_988_75).fract())
        .collect()
}

/// Reduces `op`'s output to the scalar `Σ wₖ·outₖ` with [`probe_weights`]
/// and checks its gradient with respect to every input.
pub fn finite_diff_check(
    op: CheckedOp,
    inputs: &[Tensor<f64>],
    eps: f64,
) -> Result<GradCheckReport> {
    if inputs.len() != op.arity() {
        return Err(GraphError::InvalidArgument(format!(
            "{} takes {} inputs, got {}",
            op.name(),
            op.arity(),
            inputs.len()
        )));
    }
    check_gradients(
        op.name(),
        |g, x| {
            let y = op.apply(g, x)?;
            weighted_sum(g, y)
        },
        inputs,
        eps,
    )
}

/// `Σ wₖ·yₖ` with [`probe_weights`].
pub fn weighted_sum(g: &mut Graph<f64>, y: NodeId) -> Result<NodeId> {
    let shape = g.shape(y)?.to_vec();
    let n = shape.iter().product();
    let w = g.constant(Tensor::new(shape, probe_weights(n))?);
    let prod = g.mul(y, w)?;
    g.sum(prod)
}
