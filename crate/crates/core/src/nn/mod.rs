//! Minimal reverse-mode autodiff over dense `f64` matrices.
//!
//! Every model forward pass in this crate is expressed as a [`Graph`] of
//! matrix ops; training calls [`Graph::backward`] once per mini-batch and
//! feeds the per-parameter gradients to [`Adam`]. Evaluation builds the same
//! graph and simply never runs backward, so there is a single numeric path
//! for train and inference.

mod adam;
mod graph;
mod param;
mod spline;

pub use adam::Adam;
pub use graph::{Grads, Graph, Var};
pub use param::{ParamId, ParamStore};
pub use spline::SplineGrid;
