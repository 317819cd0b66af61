//! Minimal convolutional network toolkit: channel-major tensors, GEMM-backed
//! convolution kernels, a reverse-mode tape and the Adam optimiser.

pub mod error;
pub mod graph;
pub mod kernels;
pub mod layers;
pub mod optim;
pub mod params;
pub mod scalar;
pub mod tensor;

pub use error::{NnError, Result};
pub use graph::{Activation, Gradients, Graph, Var};
pub use kernels::ConvGeometry;
pub use layers::{Conv2d, UpConv2x2};
pub use optim::{Adam, AdamConfig};
pub use params::{he_uniform, ParamId, ParamStore};
pub use scalar::Scalar;
pub use tensor::Tensor;
