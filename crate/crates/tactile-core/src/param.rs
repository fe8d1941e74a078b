//! Trainable parameter: a value tensor plus a lazily allocated gradient.
//!
//! Gradients stay unallocated until the first backward pass touches them, so
//! building a large model for inspection costs only the forward weights.

use crate::{Tensor, TensorError};

#[derive(Debug, Clone)]
pub struct Param {
    value: Tensor,
    grad: Option<Tensor>,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        Self { value, grad: None }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new(Tensor::zeros(shape))
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn value_mut(&mut self) -> &mut Tensor {
        &mut self.value
    }

    pub fn set_value(&mut self, value: Tensor) -> Result<(), TensorError> {
        if value.shape() != self.value.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "set_value",
                lhs: self.value.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        self.value = value;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Accumulate a gradient contribution, allocating on first use.
    pub fn accumulate_grad(&mut self, g: &Tensor) -> Result<(), TensorError> {
        match &mut self.grad {
            Some(existing) => existing.add_assign(g),
            None => {
                if g.shape() != self.value.shape() {
                    return Err(TensorError::ShapeMismatch {
                        op: "accumulate_grad",
                        lhs: self.value.shape().to_vec(),
                        rhs: g.shape().to_vec(),
                    });
                }
                self.grad = Some(g.clone());
                Ok(())
            }
        }
    }

    /// Gradient if any backward pass has touched this parameter.
    pub fn grad(&self) -> Option<&Tensor> {
        self.grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.fill(0.0);
        }
    }

    /// Multiply the accumulated gradient in place (batch averaging).
    pub fn scale_grad(&mut self, s: f32) {
        if let Some(g) = &mut self.grad {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }

    /// Drop the gradient buffer entirely.
    pub fn clear_grad(&mut self) {
        self.grad = None;
    }
}

/// A module exposes its parameters as stable dotted names for checkpointing
/// and optimization. `prefix` is the path of the owner; implementations push
/// `(format!("{prefix}.<field>"), &mut param)` pairs in a fixed order.
pub trait Parameterized {
    fn collect_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>);

    fn named_params(&mut self) -> Vec<(String, &mut Param)> {
        let mut out = Vec::new();
        self.collect_params("", &mut out);
        out
    }

    fn parameter_count(&mut self) -> usize {
        self.named_params().iter().map(|(_, p)| p.len()).sum()
    }

    fn zero_grads(&mut self) {
        for (_, p) in self.named_params() {
            p.zero_grad();
        }
    }
}

/// Join a prefix and a field name with a dot, skipping the dot for an empty
/// prefix so root-level names stay clean.
pub fn join_name(prefix: &str, field: &str) -> String {
    if prefix.is_empty() {
        field.to_string()
    } else {
        format!("{prefix}.{field}")
    }
}
