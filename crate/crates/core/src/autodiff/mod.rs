//! Minimal dense reverse-mode automatic differentiation with an Adam optimizer.

mod adam;
mod graph;
mod params;
mod tensor;

pub use adam::{AdamState, DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPS};
pub use graph::{Graph, Var};
pub use params::{glorot, Bound, ParamStore};
pub use tensor::{Scalar, Tensor};

/// Floor used by norms that appear in denominators.
pub const NORM_EPS: f64 = 1e-12;
