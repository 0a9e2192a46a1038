//! Minimal reverse-mode differentiable-array engine.
//!
//! Double precision throughout. A [`Graph`] is rebuilt for every batch;
//! operations evaluate eagerly and record what backward needs.

mod check;
mod graph;
mod tensor;

pub use check::{check_gradients, check_gradients_ladder, check_gradients_multi, relative_error, CoordSample, GradCheck};
pub use graph::{Graph, Var};
pub use tensor::Tensor;
pub(crate) use tensor::gemm;
