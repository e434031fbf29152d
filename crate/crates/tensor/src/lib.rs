//! Dense `f64` tensors and a tape-based reverse-mode differentiation engine
//! covering the operations needed by convolutional recurrent segmentation
//! models: dilated convolution, bilinear upsampling, batch normalization,
//! softmax, dense layers, dropout and the usual pointwise/reduction suite.

pub mod checkpoint;
pub mod error;
mod gemm;
pub mod gradcheck;
pub mod graph;
pub mod ops;
pub mod tensor;

pub use error::{Result, TensorError};
pub use graph::{BackwardFn, GradCtx, Gradients, Graph, Var};
pub use ops::conv::{Conv2dSpec, Padding};
pub use ops::norm::{BatchStats, Mode, RunningStats, BN_EPSILON, BN_MOMENTUM};
pub use ops::pointwise::sigmoid;
pub use tensor::Tensor;
