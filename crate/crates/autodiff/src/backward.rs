use crate::error::{GraphError, Result};
use crate::graph::{Graph, NodeId, Op};
use crate::scalar::Scalar;
use crate::tensor::{numel, Tensor};

impl<T: Scalar> Graph<T> {
    /// Reverse-mode gradient of the scalar `output` with respect to each
    /// node in `wrt`.
    ///
    /// The backward pass is recorded as ordinary nodes appended to this
    /// graph, so the returned gradients can feed further computation and be
    /// differentiated again. Nodes in `wrt` that `output` does not depend on
    /// get a constant zero gradient.
    pub fn gradient(&mut self, output: NodeId, wrt: &[NodeId]) -> Result<Vec<NodeId>> {
        let out_shape = self.shape(output)?.to_vec();
        if numel(&out_shape) != 1 {
            return Err(GraphError::NotScalar(out_shape));
        }
        for &w in wrt {
            self.node(w)?;
        }

        let last = output.0;
        // depends[i]: node i is downstream of some requested node.
        let mut depends = vec![false; last + 1];
        for &w in wrt {
            if w.0 <= last {
                depends[w.0] = true;
            }
        }
        for i in 0..=last {
            if !depends[i] {
                depends[i] = self.nodes[i].op.inputs().iter().any(|j| depends[j.0]);
            }
        }

        let mut adjoint: Vec<Option<NodeId>> = vec![None; last + 1];
        if depends[last] {
            adjoint[last] = Some(self.constant(Tensor::ones(out_shape)));
        }

        for i in (0..=last).rev() {
            let Some(g) = adjoint[i] else { continue };
            if !depends[i] {
                continue;
            }
            let id = NodeId(i);
            let op = self.nodes[i].op.clone();
            for (input, contribution) in self.backward_rule(id, &op, g, &depends)? {
                adjoint[input.0] = Some(match adjoint[input.0] {
                    Some(acc) => self.add(acc, contribution)?,
                    None => contribution,
                });
            }
        }

        wrt.iter()
            .map(|&w| match adjoint.get(w.0).copied().flatten() {
                Some(g) => Ok(g),
                None => {
                    let shape = self.shape(w)?.to_vec();
                    Ok(self.constant(Tensor::zeros(shape)))
                }
            })
            .collect()
    }

    /// Gradient contributions `(input, d output / d input)` of one node,
    /// given its upstream adjoint `g`.
    fn backward_rule(
        &mut self,
        id: NodeId,
        op: &Op<T>,
        g: NodeId,
        depends: &[bool],
    ) -> Result<Vec<(NodeId, NodeId)>> {
        use Op::*;
        let wants = |n: &NodeId| depends[n.0];
        let mut out = Vec::new();
        match op {
            Leaf(_) | Const(_) | Sign(_) | StopGradient(_) | RowMax(_) => {}
            MatMul {
                a,
                b,
                trans_a,
                trans_b,
            } => {
                let (a, b) = (*a, *b);
                if wants(&a) {
                    let da = match (trans_a, trans_b) {
                        (false, false) => self.matmul_t(g, b, false, true)?,
                        (false, true) => self.matmul_t(g, b, false, false)?,
                        (true, false) => self.matmul_t(b, g, false, true)?,
                        (true, true) => self.matmul_t(b, g, true, true)?,
                    };
                    out.push((a, da));
                }
                if wants(&b) {
                    let db = match (trans_a, trans_b) {
                        (false, false) => self.matmul_t(a, g, true, false)?,
                        (false, true) => self.matmul_t(g, a, true, false)?,
                        (true, false) => self.matmul_t(a, g, false, false)?,
                        (true, true) => self.matmul_t(g, a, true, true)?,
                    };
                    out.push((b, db));
                }
            }
            AddBias(x, b) => {
                if wants(x) {
                    out.push((*x, g));
                }
                if wants(b) {
                    out.push((*b, self.sum_rows(g)?));
                }
            }
            SumRows(x) => {
                let rows = self.shape(*x)?[0];
                out.push((*x, self.broadcast_rows(g, rows)?));
            }
            BroadcastRows(x, _) => out.push((*x, self.sum_rows(g)?)),
            SumCols(x) => {
                let cols = self.shape(*x)?[1];
                out.push((*x, self.broadcast_cols(g, cols)?));
            }
            BroadcastCols(x, _) => out.push((*x, self.sum_cols(g)?)),
            Sum(x) => {
                let shape = self.shape(*x)?.to_vec();
                out.push((*x, self.broadcast(g, shape)?));
            }
            Broadcast(x) => {
                let s = self.sum(g)?;
                let shape = self.shape(*x)?.to_vec();
                out.push((*x, self.reshape(s, shape)?));
            }
            Reshape(x) => {
                let shape = self.shape(*x)?.to_vec();
                out.push((*x, self.reshape(g, shape)?));
            }
            Add(a, b) => {
                if wants(a) {
                    out.push((*a, g));
                }
                if wants(b) {
                    out.push((*b, g));
                }
            }
            Sub(a, b) => {
                if wants(a) {
                    out.push((*a, g));
                }
                if wants(b) {
                    out.push((*b, self.neg(g)?));
                }
            }
            Mul(a, b) => {
                if wants(a) {
                    out.push((*a, self.mul(g, *b)?));
                }
                if wants(b) {
                    out.push((*b, self.mul(g, *a)?));
                }
            }
            Div(a, b) => {
                if wants(a) {
                    out.push((*a, self.div(g, *b)?));
                }
                if wants(b) {
                    // d(a/b)/db = -(a/b)/b
                    let t = self.mul(g, id)?;
                    let t = self.div(t, *b)?;
                    out.push((*b, self.neg(t)?));
                }
            }
            Scale(x, c) => out.push((*x, self.scale(g, c.as_f64())?)),
            AddScalar(x, _) => out.push((*x, g)),
            Elu(x) => {
                let d = self.push(EluDeriv(*x, 1), self.shape(*x)?.to_vec());
                out.push((*x, self.mul(g, d)?));
            }
            EluDeriv(x, order) => {
                let d = self.push(EluDeriv(*x, order + 1), self.shape(*x)?.to_vec());
                out.push((*x, self.mul(g, d)?));
            }
            Sigmoid(x) => {
                // s (1 - s)
                let one_minus = self.scale(id, -1.0)?;
                let one_minus = self.add_scalar(one_minus, 1.0)?;
                let d = self.mul(id, one_minus)?;
                out.push((*x, self.mul(g, d)?));
            }
            Exp(x) => out.push((*x, self.mul(g, id)?)),
            Log(x) => out.push((*x, self.div(g, *x)?)),
            Sqrt(x) => {
                let half = self.scale(g, 0.5)?;
                out.push((*x, self.div(half, id)?));
            }
            Square(x) => {
                let two_x = self.scale(*x, 2.0)?;
                out.push((*x, self.mul(g, two_x)?));
            }
            Abs(x) => {
                let s = self.sign(*x)?;
                out.push((*x, self.mul(g, s)?));
            }
            PickCols(x, cols) => {
                let width = self.shape(*x)?[1];
                out.push((*x, self.scatter_cols(g, cols, width)?));
            }
            ScatterCols(x, cols, _) => out.push((*x, self.pick_cols(g, cols)?)),
            Custom { op, inputs } => {
                for (index, input) in inputs.iter().enumerate() {
                    if !wants(input) {
                        continue;
                    }
                    let shape = self.shape(*input)?.to_vec();
                    let vjp = self.push(
                        CustomVjp {
                            op: op.clone(),
                            inputs: inputs.clone(),
                            output: id,
                            grad: g,
                            index,
                        },
                        shape,
                    );
                    out.push((*input, vjp));
                }
            }
            CustomVjp { op, .. } => {
                return Err(GraphError::HigherOrderUnsupported(op.name().to_string()));
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use crate::custom::CustomOp;
    use crate::graph::{Bindings, Graph};
    use crate::tensor::Tensor;
    use crate::GraphError;

    #[test]
    fn gradient_of_mean() {
        let mut g = Graph::<f64>::new();
        let x = g.input(vec![2]);
        let m = g.mean(x).unwrap();
        let dx = g.gradient(m, &[x]).unwrap()[0];
        let b = Bindings::new().with(x, Tensor::vector(vec![3.0, -7.0]));
        assert_eq!(g.evaluate(dx, &b).unwrap().data(), &[0.5, 0.5]);
    }

    #[test]
    fn gradient_of_elu_in_negative_region() {
        let mut g = Graph::<f64>::new();
        let x = g.input(vec![1]);
        let e = g.elu(x).unwrap();
        let s = g.sum(e).unwrap();
        let dx = g.gradient(s, &[x]).unwrap()[0];
        let b = Bindings::new().with(x, Tensor::vector(vec![-1.0]));
        let got = g.evaluate(dx, &b).unwrap().item();
        assert!((got - (-1.0f64).exp()).abs() < 1e-15);
        assert!((got - 0.3679).abs() < 1e-4);
    }

    #[test]
    fn second_order_through_gradient_norm() {
        // g(x) = (‖∇ₓ(x²/2)‖₂ − 1)², so dg/dx = 2(|x| − 1)·sign(x) = 4 at x = 3.
        let mut g = Graph::<f64>::new();
        let x = g.input(vec![1]);
        let sq = g.square(x).unwrap();
        let half = g.scale(sq, 0.5).unwrap();
        let f = g.sum(half).unwrap();
        let grad = g.gradient(f, &[x]).unwrap()[0];
        let norm = g.l2_norm(grad).unwrap();
        let shifted = g.add_scalar(norm, -1.0).unwrap();
        let penalty = g.square(shifted).unwrap();
        let dpen = g.gradient(penalty, &[x]).unwrap()[0];
        let b = Bindings::new().with(x, Tensor::vector(vec![3.0]));
        let out = g.evaluate_many(&[penalty, dpen], &b).unwrap();
        assert_eq!(out[0].item(), 4.0);
        assert_eq!(out[1].item(), 4.0);
    }

    #[test]
    fn non_scalar_output_is_rejected() {
        let mut g = Graph::<f32>::new();
        let x = g.input(vec![3]);
        let y = g.exp(x).unwrap();
        assert_eq!(g.gradient(y, &[x]), Err(GraphError::NotScalar(vec![3])));
    }

    #[test]
    fn unknown_node_is_rejected() {
        let mut g = Graph::<f32>::new();
        let x = g.input(vec![1]);
        let s = g.sum(x).unwrap();
        let mut other = Graph::<f32>::new();
        for _ in 0..10 {
            other.input(vec![1]);
        }
        let foreign = other.input(vec![1]);
        assert!(matches!(
            g.gradient(s, &[foreign]),
            Err(GraphError::UnknownNode(_))
        ));
    }

    #[test]
    fn unreachable_leaf_gets_zero_gradient() {
        let mut g = Graph::<f32>::new();
        let x = g.input(vec![2]);
        let unused = g.param(vec![3]);
        let s = g.sum(x).unwrap();
        let d = g.gradient(s, &[unused]).unwrap()[0];
        let b = Bindings::new().with(x, Tensor::vector(vec![1.0, 2.0]));
        assert_eq!(g.evaluate(d, &b).unwrap().data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn shared_subexpressions_accumulate() {
        // f = x·x + x, df/dx = 2x + 1
        let mut g = Graph::<f64>::new();
        let x = g.input(vec![1]);
        let xx = g.mul(x, x).unwrap();
        let f = g.add(xx, x).unwrap();
        let f = g.sum(f).unwrap();
        let d = g.gradient(f, &[x]).unwrap()[0];
        let b = Bindings::new().with(x, Tensor::vector(vec![2.5]));
        assert_eq!(g.evaluate(d, &b).unwrap().item(), 6.0);
    }

    #[test]
    fn stop_gradient_blocks_flow() {
        let mut g = Graph::<f64>::new();
        let x = g.input(vec![1]);
        let c = g.stop_gradient(x).unwrap();
        let y = g.mul(x, c).unwrap();
        let y = g.sum(y).unwrap();
        let d = g.gradient(y, &[x]).unwrap()[0];
        let b = Bindings::new().with(x, Tensor::vector(vec![3.0]));
        assert_eq!(g.evaluate(d, &b).unwrap().item(), 3.0);
    }

    #[derive(Debug)]
    struct Double;

    impl CustomOp<f64> for Double {
        fn name(&self) -> &str {
            "double"
        }
        fn output_shape(&self, inputs: &[&[usize]]) -> crate::Result<Vec<usize>> {
            Ok(inputs[0].to_vec())
        }
        fn forward(&self, inputs: &[&Tensor<f64>]) -> Tensor<f64> {
            inputs[0].map(|v| 2.0 * v)
        }
        fn vjp(&self, _: &[&Tensor<f64>], _: &Tensor<f64>, grad: &Tensor<f64>) -> Vec<Tensor<f64>> {
            vec![grad.map(|v| 2.0 * v)]
        }
    }

    #[test]
    fn custom_op_first_order_only() {
        let mut g = Graph::<f64>::new();
        let x = g.input(vec![2]);
        let y = g.custom(Arc::new(Double), &[x]).unwrap();
        let sq = g.square(y).unwrap();
        let s = g.sum(sq).unwrap();
        let d = g.gradient(s, &[x]).unwrap()[0];
        let b = Bindings::new().with(x, Tensor::vector(vec![1.0, -2.0]));
        // s = 4x², ds/dx = 8x
        assert_eq!(g.evaluate(d, &b).unwrap().data(), &[8.0, -16.0]);

        let n = g.sum(d).unwrap();
        assert_eq!(
            g.gradient(n, &[x]),
            Err(GraphError::HigherOrderUnsupported("double".into()))
        );
    }
}
