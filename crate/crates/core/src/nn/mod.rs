//! Minimal CPU neural-network engine: NCHW tensors, layers with hand-written
//! backward passes, and Adam.

pub mod layers;
pub mod optim;
pub mod param;
pub mod tensor;

pub use layers::{Conv2d, InstanceNorm, LeakyRelu, Linear, Padding, Relu, Sigmoid, Upsample2x};
pub use optim::Adam;
pub use param::{Param, Parameters};
pub use tensor::Tensor;
