//! The gradient-norm penalty `(‖∇_y L‖₂ − 1)²`.

use surrogate_autodiff::{Bindings, Graph, NodeId, Scalar, Tensor};

use crate::error::{CoreError, Result};
use crate::lossnet::{declare_params, pooled_loss_node, LossNetWeights};
use crate::metrics::BatchSample;

/// Added to the squared norm so the root stays differentiable at a zero
/// gradient; small enough that its square root vanishes in f32.
const NORM_FLOOR: f64 = 1e-24;

/// Per-group penalties for pooled losses `loss = [groups]` computed from
/// `x = [groups·size, width]`: the gradient of each group's loss with
/// respect to that group's inputs, flattened, its norm, then `(norm − 1)²`.
/// Returns a `[groups]` node; differentiable with respect to the loss-net
/// parameters.
pub fn penalty_node<T: Scalar>(
    g: &mut Graph<T>,
    loss: NodeId,
    x: NodeId,
    groups: usize,
    size: usize,
) -> Result<NodeId> {
    let width = g.shape(x)?[1];
    let total = g.sum(loss)?;
    // Each group's loss depends only on its own rows, so one gradient of
    // the sum holds every per-group input gradient.
    let dx = g.gradient(total, &[x])?[0];
    let per_group = g.reshape(dx, vec![groups, size * width])?;
    let sq = g.square(per_group)?;
    let sq = g.sum_cols(sq)?;
    let sq = g.add_scalar(sq, NORM_FLOOR)?;
    let norm = g.sqrt(sq)?;
    let shifted = g.add_scalar(norm, -1.0)?;
    Ok(g.square(shifted)?)
}

/// Penalty of a single sub-batch under frozen weights.
pub fn gradient_penalty(w: &LossNetWeights, batch: &BatchSample) -> Result<f32> {
    let (input, width) = batch.lossnet_input()?;
    if width != w.input_width() {
        return Err(CoreError::invalid(format!(
            "loss net takes width {}, batch provides {width}",
            w.input_width()
        )));
    }
    let rows = input.len() / width;
    let mut g = Graph::<f32>::new();
    let x = g.input(vec![rows, width]);
    let params = declare_params(&mut g, &w.spec(), false);
    let loss = pooled_loss_node(&mut g, x, &params, 1, rows)?;
    let pen = penalty_node(&mut g, loss, x, 1, rows)?;
    let mut b = Bindings::new();
    w.bind(&mut b, &params);
    b.bind(x, Tensor::new(vec![rows, width], input)?);
    let value = g.evaluate(pen, &b)?.data()[0];
    if !value.is_finite() {
        return Err(CoreError::invalid("non-finite input gradient"));
    }
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lossnet::{Layer, LossNetSpec};

    #[test]
    fn zero_net_has_unit_penalty() {
        let w = LossNetWeights::zeros(&LossNetSpec::default());
        let b = BatchSample::classification(vec![0.4, 0.6, 0.7, 0.3], vec![0, 1], 2).unwrap();
        assert_eq!(gradient_penalty(&w, &b).unwrap(), 1.0);
    }

    #[test]
    fn unit_gradient_has_zero_penalty() {
        // elu(y + 5) is y + 5 on [0, 1], so a single sample has slope 1
        let w = LossNetWeights::from_layers(vec![
            Layer {
                in_dim: 1,
                out_dim: 1,
                weight: vec![1.0],
                bias: vec![5.0],
            },
            Layer {
                in_dim: 1,
                out_dim: 1,
                weight: vec![1.0],
                bias: vec![0.0],
            },
        ])
        .unwrap();
        let b = BatchSample::classification(vec![0.2, 0.8], vec![1], 2).unwrap();
        assert!(gradient_penalty(&w, &b).unwrap().abs() < 1e-6);
    }
}
