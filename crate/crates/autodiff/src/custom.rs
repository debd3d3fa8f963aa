use std::fmt::Debug;

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// An operation implemented outside the engine with a hand-written
/// vector-Jacobian product.
///
/// The VJP is evaluated as an opaque node, so a custom op supports first
/// order gradients only; differentiating through its backward pass is an
/// error.
pub trait CustomOp<T: Scalar>: Debug + Send + Sync {
    fn name(&self) -> &str;

    fn output_shape(&self, inputs: &[&[usize]]) -> Result<Vec<usize>>;

    fn forward(&self, inputs: &[&Tensor<T>]) -> Tensor<T>;

    /// Gradients with respect to each input, given the upstream gradient
    /// `grad` of the output.
    fn vjp(&self, inputs: &[&Tensor<T>], output: &Tensor<T>, grad: &Tensor<T>) -> Vec<Tensor<T>>;
}
