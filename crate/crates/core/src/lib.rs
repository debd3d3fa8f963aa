// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod correlation;
pub mod data;
pub mod error;
pub mod generators;
pub mod lossnet;
pub mod metrics;
pub mod optim;
pub mod softrank;

pub use error::{CoreError, Result};
pub mod trainer;
