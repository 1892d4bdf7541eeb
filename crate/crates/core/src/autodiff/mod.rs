//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Graph`] records every operation applied to its [`Var`] handles.
//! [`Graph::backward`] runs one reverse sweep and deposits gradients on
//! parameter leaves. [`Graph::grad`] instead records the gradient computation
//! as new nodes, which is what a gradient penalty needs.
//!
//! Subgradient conventions: `sign` has zero derivative, `clamp` passes the
//! gradient on `[lo, hi]` (boundary inclusive), `sqrt` has zero derivative at
//! 0, `abs` has zero derivative at 0, and max pooling routes to the first
//! maximum of each window.
//!
//! Broadcasting is limited to scalars and trailing-suffix shapes; everything
//! else goes through explicit `expand`, `expand_last` or `reshape`.

mod backward;
mod graph;
mod kernels;
mod tensor;

pub use graph::{Graph, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
