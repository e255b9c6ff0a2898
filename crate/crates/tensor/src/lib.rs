//! Dense NCHW tensors with the convolution, pooling and reduction kernels a
//! small image-to-image network needs, plus a reverse-mode tape.

mod conv;
mod error;
mod gemm;
mod graph;
mod pool;
mod scalar;
mod tensor;

pub use conv::{conv2d, conv2d_backward, conv2d_output_shape, ConvGrads, ConvSpec, WeightMode};
pub use error::{Result, TensorError};
pub use graph::{Gradients, Graph, Var};
pub use pool::{adaptive_avg_pool, avg_pool2, max_pool2, upsample2};
pub use scalar::Float;
pub use tensor::Tensor;
