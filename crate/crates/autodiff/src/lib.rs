//! A small dense-tensor engine: row-major `f64` tensors, a tape that records
//! operations as they run, reverse-mode gradients, ADAM with a stepwise
//! learning-rate decay, and a JSON checkpoint format.
//!
//! Every graph value is viewed as a matrix: the last dimension is the column
//! count and all leading dimensions fold into rows.

pub mod adam;
pub mod check;
pub mod checkpoint;
mod error;
pub mod graph;
mod tensor;

pub use adam::{lr_at, AdamConfig, AdamState, ParamStore};
pub use error::{Result, TensorError};
pub use graph::{Gradients, Graph, Var};
pub use tensor::Tensor;
