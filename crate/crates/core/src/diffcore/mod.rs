//! Differentiable numerical substrate: dense tensors, a constant sparse
//! matrix, a reverse-mode tape, parameter storage, Adam, and checkpoints.

mod adam;
mod checkpoint;
mod params;
mod sparse;
pub mod tape;
pub(crate) mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, EncodedTensor, OptimizerCheckpoint};
pub use params::{Param, ParamStore};
pub use sparse::SparseMatrix;
pub use tape::{Gradients, Graph, Var};
pub use tensor::Tensor;
