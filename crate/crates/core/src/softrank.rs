//! Hard ranks and their relaxation through an odd-even transposition
//! sorting network with logistic comparators.
//!
//! Layer `k` (0-based) of the network compares positions `(i, i + 1)` for
//! every `i ≡ k (mod 2)`. A comparator mixes its two lanes with swap weight
//! `α = σ(s·(x_i − x_{i+1}))`:
//!
//! ```text
//! x_i'     = (1 − α)·x_i + α·x_{i+1}
//! x_{i+1}' = α·x_i       + (1 − α)·x_{i+1}
//! ```
//!
//! Each layer is a symmetric doubly stochastic matrix `L_k`, the relaxed
//! permutation is `P = L_{n−1}⋯L_0`, and the soft ranks are `Pᵀ·(1, …, n)`.

use std::cmp::Ordering;
use std::sync::Arc;

use surrogate_autodiff::{CustomOp, Graph, GraphError, NodeId, Scalar, Tensor};

use crate::error::{CoreError, Result};

/// Average-tie ascending ranks in `[1, n]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RankVector {
    pub ranks: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SoftRankVector {
    pub ranks: Vec<f64>,
    pub steepness: f64,
}

/// Row-major `n × n` doubly stochastic matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct RelaxedPermutation {
    pub n: usize,
    pub matrix: Vec<f64>,
    pub steepness: f64,
}

impl RelaxedPermutation {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.matrix[row * self.n + col]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.matrix
            .chunks(self.n.max(1))
            .map(|r| r.iter().sum())
            .collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        (0..self.n)
            .map(|c| (0..self.n).map(|r| self.get(r, c)).sum())
            .collect()
    }
}

pub(crate) fn check_finite(v: &[f64], what: &str) -> Result<()> {
    if let Some(x) = v.iter().find(|x| !x.is_finite()) {
        return Err(CoreError::invalid(format!(
            "{what} contains non-finite value {x}"
        )));
    }
    Ok(())
}

fn check_steepness(steepness: f64) -> Result<()> {
    if steepness > 0.0 {
        Ok(())
    } else {
        Err(CoreError::invalid(format!(
            "steepness must be positive, got {steepness}"
        )))
    }
}

/// Ranks with ties sharing the mean of the positions they span.
pub fn hard_rank(v: &[f64]) -> Result<RankVector> {
    if v.is_empty() {
        return Err(CoreError::invalid("cannot rank an empty vector"));
    }
    check_finite(v, "rank input")?;
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap_or(Ordering::Equal));
    let mut ranks = vec![0.0; v.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && v[order[end]] == v[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end, 1-based
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    Ok(RankVector { ranks })
}

fn swap_weight<T: Scalar>(steepness: T, d: T) -> T {
    if d == T::zero() {
        // keeps σ(∞·0) well defined
        return T::of(0.5);
    }
    let z = steepness * d;
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Comparator lanes of layer `k`: left positions `i`, paired with `i + 1`.
fn lanes(n: usize, k: usize) -> impl Iterator<Item = usize> {
    (k % 2..n.saturating_sub(1)).step_by(2)
}

/// Applies the layer matrix (symmetric) to `y` in place.
fn mix<T: Scalar>(y: &mut [T], n: usize, k: usize, alpha: &[T]) {
    for (c, i) in lanes(n, k).enumerate() {
        let a = alpha[c];
        let (yi, yj) = (y[i], y[i + 1]);
        y[i] = (T::one() - a) * yi + a * yj;
        y[i + 1] = a * yi + (T::one() - a) * yj;
    }
}

/// Forward pass of the network: per-layer swap weights, and the lane values
/// entering each layer.
struct Trace<T> {
    alphas: Vec<Vec<T>>,
    inputs: Vec<Vec<T>>,
}

fn run_network<T: Scalar>(v: &[T], steepness: T, keep_inputs: bool) -> Trace<T> {
    let n = v.len();
    let mut x = v.to_vec();
    let mut alphas = Vec::with_capacity(n);
    let mut inputs = Vec::new();
    for k in 0..n {
        let alpha: Vec<T> = lanes(n, k)
            .map(|i| swap_weight(steepness, x[i] - x[i + 1]))
            .collect();
        if keep_inputs {
            inputs.push(x.clone());
        }
        mix(&mut x, n, k, &alpha);
        alphas.push(alpha);
    }
    Trace { alphas, inputs }
}

fn ranks_from_trace<T: Scalar>(n: usize, alphas: &[Vec<T>]) -> Vec<T> {
    let mut u: Vec<T> = (1..=n).map(|r| T::of(r as f64)).collect();
    for k in (0..n).rev() {
        mix(&mut u, n, k, &alphas[k]);
    }
    u
}

pub fn relaxed_permutation(v: &[f64], steepness: f64) -> Result<RelaxedPermutation> {
    check_steepness(steepness)?;
    check_finite(v, "soft rank input")?;
    let n = v.len();
    let trace = run_network(v, steepness, false);
    // Column c of P is L_{n−1}⋯L_0 e_c.
    let mut matrix = vec![0.0; n * n];
    for c in 0..n {
        let mut e = vec![0.0; n];
        e[c] = 1.0;
        for (k, alpha) in trace.alphas.iter().enumerate() {
            mix(&mut e, n, k, alpha);
        }
        for (r, value) in e.into_iter().enumerate() {
            matrix[r * n + c] = value;
        }
    }
    Ok(RelaxedPermutation {
        n,
        matrix,
        steepness,
    })
}

/// Soft ranks in O(n²) without forming the permutation matrix.
pub fn soft_rank(v: &[f64], steepness: f64) -> Result<SoftRankVector> {
    check_steepness(steepness)?;
    check_finite(v, "soft rank input")?;
    Ok(SoftRankVector {
        ranks: soft_rank_values(v, steepness),
        steepness,
    })
}

pub(crate) fn soft_rank_values<T: Scalar>(v: &[T], steepness: T) -> Vec<T> {
    let trace = run_network(v, steepness, false);
    ranks_from_trace(v.len(), &trace.alphas)
}

/// Vector-Jacobian product of [`soft_rank`]: returns `Jᵀ·g` for upstream
/// gradient `g` on the ranks.
pub(crate) fn soft_rank_vjp<T: Scalar>(v: &[T], steepness: T, g: &[T]) -> Vec<T> {
    let n = v.len();
    let trace = run_network(v, steepness, true);

    // q_k = L_{k−1}⋯L_0·g, the upstream gradient pushed through the first k layers.
    let mut qs = Vec::with_capacity(n);
    let mut q = g.to_vec();
    for k in 0..n {
        qs.push(q.clone());
        mix(&mut q, n, k, &trace.alphas[k]);
    }

    // u_k = L_{k+1}ᵀ⋯L_{n−1}ᵀ·w, and xbar is the adjoint of the lane values.
    let mut u: Vec<T> = (1..=n).map(|r| T::of(r as f64)).collect();
    let mut xbar = vec![T::zero(); n];
    for k in (0..n).rev() {
        let alpha = &trace.alphas[k];
        let x = &trace.inputs[k];
        let q = &qs[k];
        let abar: Vec<T> = lanes(n, k)
            .map(|i| {
                let j = i + 1;
                (u[i] - u[j]) * (q[j] - q[i]) + (xbar[i] - xbar[j]) * (x[j] - x[i])
            })
            .collect();
        mix(&mut u, n, k, alpha);
        mix(&mut xbar, n, k, alpha);
        for (c, i) in lanes(n, k).enumerate() {
            let a = alpha[c];
            let d = steepness * a * (T::one() - a) * abar[c];
            xbar[i] = xbar[i] + d;
            xbar[i + 1] = xbar[i + 1] - d;
        }
    }
    xbar
}

/// Graph operation ranking a vector, or each row of a matrix independently.
/// First-order differentiable only.
#[derive(Clone, Debug)]
pub struct SoftRankOp {
    steepness: f64,
}

impl SoftRankOp {
    pub fn new(steepness: f64) -> Result<Self> {
        check_steepness(steepness)?;
        Ok(SoftRankOp { steepness })
    }

    pub fn steepness(&self) -> f64 {
        self.steepness
    }
}

fn row_len(shape: &[usize]) -> usize {
    shape.last().copied().unwrap_or(1)
}

impl<T: Scalar> CustomOp<T> for SoftRankOp {
    fn name(&self) -> &str {
        "soft_rank"
    }

    fn output_shape(&self, inputs: &[&[usize]]) -> surrogate_autodiff::Result<Vec<usize>> {
        match inputs {
            [shape] if shape.len() == 1 || shape.len() == 2 => Ok(shape.to_vec()),
            [shape] => Err(GraphError::ShapeMismatch {
                op: "soft_rank",
                detail: format!("expected a vector or matrix, got {shape:?}"),
            }),
            _ => Err(GraphError::InvalidArgument(format!(
                "soft_rank takes one input, got {}",
                inputs.len()
            ))),
        }
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Tensor<T> {
        let x = inputs[0];
        let n = row_len(x.shape());
        let s = T::of(self.steepness);
        let mut out = Vec::with_capacity(x.numel());
        if n > 0 {
            for row in x.data().chunks(n) {
                out.extend(soft_rank_values(row, s));
            }
        }
        Tensor::new(x.shape().to_vec(), out).expect("shape preserved")
    }

    fn vjp(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, grad: &Tensor<T>) -> Vec<Tensor<T>> {
        let x = inputs[0];
        let n = row_len(x.shape());
        let s = T::of(self.steepness);
        let mut out = Vec::with_capacity(x.numel());
        if n > 0 {
            for (row, g) in x.data().chunks(n).zip(grad.data().chunks(n)) {
                out.extend(soft_rank_vjp(row, s, g));
            }
        }
        vec![Tensor::new(x.shape().to_vec(), out).expect("shape preserved")]
    }
}

/// Adds a soft-rank node over `x` (a vector, or row-wise over a matrix).
pub fn soft_rank_node<T: Scalar>(g: &mut Graph<T>, x: NodeId, steepness: f64) -> Result<NodeId> {
    let op: Arc<dyn CustomOp<T>> = Arc::new(SoftRankOp::new(steepness)?);
    Ok(g.custom(op, &[x])?)
}
