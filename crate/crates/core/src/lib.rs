//! Ghost modules, Ghost bottlenecks and GhostNet on a small from-scratch CNN framework,
//! with an exact parameter/MAC cost model, desk-scale training and a kernel-fitting
//! toy experiment.

pub mod arch;
pub mod cli;
pub mod cost;
pub mod error;
pub mod ghost;
pub mod image;
pub mod instrument;
pub mod layer;
pub mod ops;
pub mod tensor;
pub mod tensor_io;
pub mod toyfit;
pub mod train;

pub use error::{Error, Result};
pub use layer::{Layer, Mode, Param, Rng};
pub use tensor::{DType, Scalar, Shape, Tensor};
