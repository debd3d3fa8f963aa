use crate::graph::{NodeId, Op};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn elu<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        x.exp() - T::one()
    }
}

fn elu_deriv<T: Scalar>(x: T, order: u32) -> T {
    if x > T::zero() {
        if order == 1 {
            T::one()
        } else {
            T::zero()
        }
    } else {
        x.exp()
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn sign<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

fn new<T: Scalar>(shape: &[usize], data: Vec<T>) -> Tensor<T> {
    Tensor::new(shape.to_vec(), data).expect("shape inferred at build time")
}

/// Forward computation of a non-leaf node whose inputs are available
/// through `get`.
pub(crate) fn compute<'a, T: Scalar>(
    op: &Op<T>,
    shape: &[usize],
    get: impl Fn(NodeId) -> &'a Tensor<T>,
) -> Tensor<T> {
    use Op::*;
    match op {
        Leaf(_) | Const(_) => unreachable!("leaves are bound, not computed"),
        MatMul {
            a,
            b,
            trans_a,
            trans_b,
        } => {
            let (a, b) = (get(*a), get(*b));
            let (m, n) = (shape[0], shape[1]);
            let (ar, ac) = (a.shape()[0], a.shape()[1]);
            let bc = b.shape()[1];
            let k = if *trans_a { ar } else { ac };
            let (rsa, csa) = if *trans_a {
                (1, ac as isize)
            } else {
                (ac as isize, 1)
            };
            let (rsb, csb) = if *trans_b {
                (1, bc as isize)
            } else {
                (bc as isize, 1)
            };
            let mut out = vec![T::zero(); m * n];
            T::gemm(
                m,
                k,
                n,
                a.data(),
                rsa,
                csa,
                b.data(),
                rsb,
                csb,
                &mut out,
                n as isize,
                1,
            );
            new(shape, out)
        }
        AddBias(x, b) => {
            let (x, b) = (get(*x), get(*b));
            let n = shape[1];
            let data = x
                .data()
                .iter()
                .enumerate()
                .map(|(i, &v)| v + b.data()[i % n])
                .collect();
            new(shape, data)
        }
        SumRows(x) => {
            let x = get(*x);
            let n = shape[0];
            let mut out = vec![T::zero(); n];
            for row in x.data().chunks(n.max(1)) {
                for (o, &v) in out.iter_mut().zip(row) {
                    *o = *o + v;
                }
            }
            new(shape, out)
        }
        BroadcastRows(x, rows) => {
            let x = get(*x);
            let mut out = Vec::with_capacity(rows * x.numel());
            for _ in 0..*rows {
                out.extend_from_slice(x.data());
            }
            new(shape, out)
        }
        SumCols(x) => {
            let x = get(*x);
            let cols = x.shape()[1];
            let data = if cols == 0 {
                vec![T::zero(); shape[0]]
            } else {
                x.data()
                    .chunks(cols)
                    .map(|r| r.iter().copied().sum())
                    .collect()
            };
            new(shape, data)
        }
        BroadcastCols(x, cols) => {
            let x = get(*x);
            let data = x
                .data()
                .iter()
                .flat_map(|&v| std::iter::repeat_n(v, *cols))
                .collect();
            new(shape, data)
        }
        Sum(x) => Tensor::scalar(get(*x).data().iter().copied().sum()),
        Broadcast(x) => Tensor::full(shape.to_vec(), get(*x).item()),
        Reshape(x) => new(shape, get(*x).data().to_vec()),
        Add(a, b) => get(*a).zip_map(get(*b), |a, b| a + b),
        Sub(a, b) => get(*a).zip_map(get(*b), |a, b| a - b),
        Mul(a, b) => get(*a).zip_map(get(*b), |a, b| a * b),
        Div(a, b) => get(*a).zip_map(get(*b), |a, b| a / b),
        Scale(x, c) => get(*x).map(|v| v * *c),
        AddScalar(x, c) => get(*x).map(|v| v + *c),
        Elu(x) => get(*x).map(elu),
        EluDeriv(x, order) => get(*x).map(|v| elu_deriv(v, *order)),
        Sigmoid(x) => get(*x).map(sigmoid),
        Exp(x) => get(*x).map(|v| v.exp()),
        Log(x) => get(*x).map(|v| v.ln()),
        Sqrt(x) => get(*x).map(|v| v.sqrt()),
        Square(x) => get(*x).map(|v| v * v),
        Abs(x) => get(*x).map(|v| v.abs()),
        Sign(x) => get(*x).map(sign),
        StopGradient(x) => get(*x).clone(),
        RowMax(x) => {
            let x = get(*x);
            let cols = x.shape()[1];
            let data = x
                .data()
                .chunks(cols.max(1))
                .map(|r| r.iter().copied().fold(T::neg_infinity(), T::max))
                .collect();
            new(shape, data)
        }
        PickCols(x, cols) => {
            let x = get(*x);
            let width = x.shape()[1];
            let data = cols
                .iter()
                .enumerate()
                .map(|(r, &c)| x.data()[r * width + c])
                .collect();
            new(shape, data)
        }
        ScatterCols(x, cols, width) => {
            let x = get(*x);
            let mut out = vec![T::zero(); shape[0] * width];
            for (r, &c) in cols.iter().enumerate() {
                out[r * width + c] = x.data()[r];
            }
            new(shape, out)
        }
        Custom { op, inputs } => {
            let ins: Vec<&Tensor<T>> = inputs.iter().map(|&i| get(i)).collect();
            op.forward(&ins)
        }
        CustomVjp {
            op,
            inputs,
            output,
            grad,
            index,
        } => {
            let ins: Vec<&Tensor<T>> = inputs.iter().map(|&i| get(i)).collect();
            let mut grads = op.vjp(&ins, get(*output), get(*grad));
            grads.swap_remove(*index)
        }
    }
}
