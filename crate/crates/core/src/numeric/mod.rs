//! Tensors, parameters, differentiable layers, SGD and gradient checking.

mod gradcheck;
mod layers;
mod optim;
mod param;
mod rng;
mod tensor;

pub use gradcheck::{grad_check, grad_check_with, Coverage, GradCheckable};
pub use layers::{sigmoid, softmax, Init, Layer, LayerContext, LayerKind, Mode};
pub(crate) use layers::{axpy, dot};
pub use optim::{sgd_step, SgdConfig};
pub use param::{HasParameters, Parameter};
pub use rng::{RngStream, RNG_ALGORITHM};
pub use tensor::Tensor;
