use std::sync::atomic::{AtomicU64, Ordering};

use super::Tensor;

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn next_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

/// A trainable tensor with its gradient, momentum buffer and relative rate.
///
/// Every mutation of the value stamps a fresh, process-unique version so
/// that forward contexts recorded earlier can detect that they are stale.
#[derive(Clone, Debug)]
pub struct Parameter {
    name: String,
    value: Tensor,
    grad: Tensor,
    momentum: Tensor,
    /// Relative learning rate; 0 freezes the parameter.
    pub lr_multiplier: f64,
    /// Whether weight decay applies (weights yes, biases no).
    pub decay: bool,
    version: u64,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor, decay: bool) -> Self {
        let shape = value.shape().to_vec();
        Parameter {
            name: name.into(),
            value,
            grad: Tensor::zeros(&shape),
            momentum: Tensor::zeros(&shape),
            lr_multiplier: 1.0,
            decay,
            version: next_version(),
        }
    }

    pub fn weight(name: impl Into<String>, value: Tensor) -> Self {
        Self::new(name, value, true)
    }

    pub fn bias(name: impl Into<String>, value: Tensor) -> Self {
        Self::new(name, value, false)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    /// Mutable access to the value; invalidates recorded forward contexts.
    pub fn value_mut(&mut self) -> &mut Tensor {
        self.version = next_version();
        &mut self.value
    }

    pub fn grad(&self) -> &Tensor {
        &self.grad
    }

    pub fn grad_mut(&mut self) -> &mut Tensor {
        &mut self.grad
    }

    pub fn momentum(&self) -> &Tensor {
        &self.momentum
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn reset_momentum(&mut self) {
        self.momentum.fill(0.0);
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub(crate) fn split_for_update(&mut self) -> (&mut Tensor, &mut Tensor, &mut Tensor) {
        self.version = next_version();
        (&mut self.value, &mut self.grad, &mut self.momentum)
    }
}

/// Anything that owns an ordered list of named parameters.
pub trait HasParameters {
    fn parameters(&self) -> Vec<&Parameter>;
    fn parameters_mut(&mut self) -> Vec<&mut Parameter>;

    fn zero_grads(&mut self) {
        for p in self.parameters_mut() {
            p.zero_grad();
        }
    }

    fn find_parameter(&self, name: &str) -> Option<&Parameter> {
        self.parameters().into_iter().find(|p| p.name() == name)
    }
}
