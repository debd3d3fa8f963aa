//! Minimal reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Graph`] is built once from shape-checked operations and evaluated
//! any number of times with fresh leaf [`Bindings`]. [`Graph::gradient`]
//! records the backward pass as new nodes in the same graph, so a scalar
//! computed from a gradient (a gradient norm penalty, say) can itself be
//! differentiated.
//!
//! ```
//! use surrogate_autodiff::{Bindings, Graph, Tensor};
//!
//! let mut g = Graph::<f64>::new();
//! let x = g.input(vec![1]);
//! let sq = g.square(x).unwrap();
//! let half = g.scale(sq, 0.5).unwrap();
//! let y = g.sum(half).unwrap();
//! let dx = g.gradient(y, &[x]).unwrap()[0];
//! let b = Bindings::new().with(x, Tensor::vector(vec![3.0]));
//! assert_eq!(g.evaluate(dx, &b).unwrap().item(), 3.0);
//! ```

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod backward;
mod custom;
mod error;
pub mod gradcheck;
mod graph;
mod kernels;
mod scalar;
mod tensor;

pub use custom::CustomOp;
pub use error::{GraphError, Result};
pub use gradcheck::{
    check_gradients, finite_diff_check, relative_error, CheckedOp, GradCheckEntry, GradCheckReport,
};
pub use graph::{Bindings, Graph, LeafKind, NodeId};
pub use scalar::Scalar;
pub use tensor::Tensor;
