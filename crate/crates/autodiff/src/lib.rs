//! A small define-by-run autodiff engine.
//!
//! Every backward rule is itself recorded on the tape, so gradients can be
//! differentiated again. That is what gradient penalties on `∇_x D(x)` need.
//! Tensors are dense, row-major and channel-last for image data.

pub mod exec;
mod graph;
pub mod kernels;
mod optim;
mod params;
mod real;
mod tensor;

pub use graph::{Graph, Var};
pub use kernels::ConvGeom;
pub use optim::{Adam, AdamConfig};
pub use params::{Bound, ParamSet};
pub use real::Real;
pub use tensor::{ShapeError, Tensor};
