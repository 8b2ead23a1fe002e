//! Minimal double-precision neural network engine.
//!
//! Every layer an FCAE or its classifier head needs has a forward and a
//! hand-written backward pass; models chain them and run the backward passes
//! in reverse order, accumulating parameter gradients.

pub mod adam;
pub mod conv;
pub mod init;
pub mod loss;
pub mod model;
pub mod pool;
mod tensor;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adam::{Adam, AdamConfig};
pub use model::{Classifier, ClassifierStep, ConvBlock, Dense, Encoder, EncoderTrace, FcaeModel, LossParts};
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("degenerate architecture: {0}")]
    Degenerate(String),
    #[error("non-finite values produced by layer `{layer}`")]
    NonFinite { layer: String },
}

/// A named trainable buffer with its gradient accumulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub value: Vec<f64>,
    #[serde(skip)]
    pub grad: Vec<f64>,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Vec<f64>) -> Self {
        let grad = vec![0.0; value.len()];
        Self {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.clear();
        self.grad.resize(self.value.len(), 0.0);
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Masks `grad` by the positive part of the activation output.
pub fn relu_backward(activated: &Tensor, grad: &Tensor) -> Tensor {
    let mut g = grad.clone();
    for (gv, &a) in g.data_mut().iter_mut().zip(activated.data()) {
        if a <= 0.0 {
            *gv = 0.0;
        }
    }
    g
}

pub(crate) fn check_finite(t: &Tensor, layer: impl FnOnce() -> String) -> Result<(), NnError> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(NnError::NonFinite { layer: layer() })
    }
}
