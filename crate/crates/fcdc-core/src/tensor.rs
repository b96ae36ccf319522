//! Dense row-major tensors.
//!
//! A [`Tensor`] is the value currency of the whole crate: encoder activations,
//! parameters, queue entries and exported embeddings are all plain dense
//! tensors of `f64`. Gradients, when present, live in the optional `grad`
//! slot and always share the tensor's shape.

use crate::error::{Error, Result};

/// Dense n-dimensional value with an optional gradient slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    /// Whether reverse-mode differentiation should produce a gradient for
    /// this tensor when it is bound to a tape as a leaf.
    pub requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Storage precision for completed operations.
///
/// `F64` keeps full double precision so gradient oracles stay sharp. `F32`
/// rounds every completed operation's output through `f32`, emulating
/// single-precision storage with a single code path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F64,
    F32,
}

impl Default for Precision {
    fn default() -> Self {
        Precision::F64
    }
}

impl Precision {
    /// Epsilon used inside layer normalization's square root.
    pub fn layer_norm_eps(self) -> f64 {
        match self {
            Precision::F64 => 1e-12,
            Precision::F32 => 1e-5,
        }
    }

    pub(crate) fn quantize(self, data: &mut [f64]) {
        if self == Precision::F32 {
            for v in data.iter_mut() {
                *v = *v as f32 as f64;
            }
        }
    }
}

impl Tensor {
    /// Build a tensor from a shape and row-major data.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::invalid("tensor", "zero extent in shape"));
        }
        if numel != data.len() {
            return Err(Error::invalid(
                "tensor",
                format!("shape {:?} implies {} values, got {}", shape, numel, data.len()),
            ));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op: "tensor" });
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn from_vec(v: Vec<f64>) -> Self {
        Tensor {
            shape: vec![v.len()],
            data: v,
            requires_grad: false,
            grad: None,
        }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// The single value of a scalar (one-element) tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Add `g` into the gradient slot, allocating it on first use.
    pub fn accumulate_grad(&mut self, g: &[f64]) {
        assert_eq!(g.len(), self.data.len(), "gradient shape mismatch");
        match &mut self.grad {
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += b;
                }
            }
            None => self.grad = Some(g.to_vec()),
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Row `i` of a 2-D tensor as a fresh vector.
    pub fn row(&self, i: usize) -> Vec<f64> {
        assert_eq!(self.shape.len(), 2, "row() on non-matrix tensor");
        let cols = self.shape[1];
        self.data[i * cols..(i + 1) * cols].to_vec()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
