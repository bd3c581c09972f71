//! Dense f32 tensors with reverse-mode automatic differentiation.
//!
//! The engine is deliberately small: row-major `Vec<f32>` storage, a handful
//! of operations (3×3 convolution, dense layers, ReLU, add, concat, narrow,
//! flatten, mean, MSE) recorded on a [`Graph`], gradient accumulation by a
//! single reverse sweep, and Adam / SGD parameter updates.
//!
//! Every kernel accumulates in a fixed, documented order so that results are
//! bit-for-bit reproducible across runs and thread counts.

mod graph;
mod kernels;
mod optim;

pub use graph::{Graph, NodeId};
pub use kernels::conv_out_size;
pub use optim::{OptimizerKind, OptimizerState};

use thiserror::Error;

/// Errors produced by tensor construction, graph operations and optimizer
/// steps.
#[derive(Debug, Error)]
pub enum TensorError {
    #[error("data length {got} does not match shape {shape:?} ({expected} elements)")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("{op}: shape mismatch: {details}")]
    ShapeMismatch { op: &'static str, details: String },
    #[error("{op}: expected a rank-{expected} tensor, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: axis {axis} out of range for rank-{rank} tensor")]
    Axis {
        op: &'static str,
        axis: usize,
        rank: usize,
    },
    #[error("narrow: range {start}..{end} out of bounds for axis {axis} of length {size}")]
    NarrowRange {
        axis: usize,
        start: usize,
        end: usize,
        size: usize,
    },
    #[error("conv2d: unsupported stride {stride} (only 1 and 2 are supported)")]
    Stride { stride: usize },
    #[error("{op}: reduction over an empty tensor")]
    Empty { op: &'static str },
    #[error("backward: loss must be a scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("optimizer step {step}: non-finite gradient for parameter {index}")]
    NonFiniteGradient { index: usize, step: u64 },
    #[error("optimizer: got {got} gradients for {params} parameters")]
    ParamCount { params: usize, got: usize },
    #[error("optimizer: gradient {index} has {got} elements, parameter has {expected}")]
    GradLength {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("node {node} does not belong to this graph (len {len})")]
    UnknownNode { node: usize, len: usize },
}

/// A dense row-major f32 tensor.
///
/// `grad` is populated by [`Graph::backward`] for leaves created with
/// `requires_grad == true`; it always has the same length as `data`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
    requires_grad: bool,
    grad: Option<Vec<f32>>,
}

impl Tensor {
    /// Builds a tensor from explicit contents, checking that the data length
    /// matches the shape product.
    pub fn from_vec(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(TensorError::DataLength {
                shape,
                expected,
                got: data.len(),
            });
        }
        Ok(Self {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    /// A tensor filled with zeros.
    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
            requires_grad: false,
            grad: None,
        }
    }

    /// A tensor with every element set to `value`.
    pub fn full(shape: Vec<usize>, value: f32) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![value; n],
            requires_grad: false,
            grad: None,
        }
    }

    /// A single-element tensor of shape `[1]`.
    pub fn scalar(value: f32) -> Self {
        Self::full(vec![1], value)
    }

    /// Marks the tensor as a differentiation target (builder style).
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, value: bool) {
        self.requires_grad = value;
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    /// Gradient of the most recent backward pass, if one reached this tensor.
    pub fn grad(&self) -> Option<&[f32]> {
        self.grad.as_deref()
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub(crate) fn set_grad(&mut self, grad: Vec<f32>) {
        debug_assert_eq!(grad.len(), self.data.len());
        self.grad = Some(grad);
    }

    /// Element accessor by multi-dimensional index (row-major).
    pub fn get(&self, index: &[usize]) -> f32 {
        assert_eq!(index.len(), self.shape.len(), "index rank mismatch");
        let mut off = 0;
        for (i, (&ix, &dim)) in index.iter().zip(&self.shape).enumerate() {
            assert!(ix < dim, "index {ix} out of bounds for axis {i} (len {dim})");
            off = off * dim + ix;
        }
        self.data[off]
    }

    /// True when every element is finite (no NaN or infinity).
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
