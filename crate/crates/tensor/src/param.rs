//! Trainable parameter: a tensor plus its optimizer state and freeze flag.

use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tensor::Tensor;

/// A model weight. Holds first/second Adam moments inline so a parameter is
/// self-contained; `frozen` parameters are guaranteed bit-identical across
/// any number of optimizer steps.
pub struct Parameter<T: Real> {
    pub value: Tensor<T>,
    pub frozen: bool,
    pub(crate) m: Vec<T>,
    pub(crate) v: Vec<T>,
    pub(crate) t: u64,
}

impl<T: Real> Parameter<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let n = value.len();
        Parameter {
            value,
            frozen: false,
            m: vec![T::ZERO; n],
            v: vec![T::ZERO; n],
            t: 0,
        }
    }

    pub fn frozen(value: Tensor<T>) -> Self {
        let mut p = Parameter::new(value);
        p.frozen = true;
        p
    }

    /// Optimizer step count so far.
    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Replace the value in place (checkpoint restore). The shape is part of
    /// the model's identity and may not change.
    pub fn set_data(&mut self, data: &[T]) -> Result<()> {
        if data.len() != self.value.len() {
            return Err(TensorError::dim(
                "parameter restore",
                format!("{} values", self.value.len()),
                format!("{} values", data.len()),
            ));
        }
        self.value.data_mut().copy_from_slice(data);
        Ok(())
    }
}
