//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! Values are immutable row-major buffers behind `Arc`; operations live on a
//! [`Tape`] that records one node per op in append order. Replaying the tape
//! in reverse visits each node exactly once, accumulating gradients on
//! fan-out. Everything is 64-bit and single-threaded, so identical inputs
//! give bitwise-identical outputs and gradients.

mod adam;
pub(crate) mod conv;
mod tape;

pub use adam::AdamState;
pub use tape::{Gradients, NodeId, Tape};

use crate::error::{DasError, Result};
use std::sync::Arc;

/// Shape plus shared data buffer, optionally linked to a tape node.
#[derive(Clone, Debug)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    node: Option<NodeId>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(DasError::Dimension(format!(
                "shape {:?} holds {} elements, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: Arc::new(data),
            node: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(vec![0.0; n]),
            node: None,
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(vec![value; n]),
            node: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: Arc::new(vec![value]),
            node: None,
        }
    }

    /// Uniform values on (lo, hi) drawn in index order from `rng`.
    pub fn uniform<R: rand::Rng>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Self {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(data),
            node: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn node(&self) -> Option<NodeId> {
        self.node
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Single element of a rank-n tensor, for tests and small readers.
    pub fn at(&self, index: &[usize]) -> f64 {
        assert_eq!(index.len(), self.shape.len(), "index rank mismatch");
        let mut flat = 0usize;
        for (i, (&ix, &dim)) in index.iter().zip(&self.shape).enumerate() {
            assert!(ix < dim, "index {ix} out of bounds for axis {i} (len {dim})");
            flat = flat * dim + ix;
        }
        self.data[flat]
    }

    /// Gather along the first axis: rows `idx` of `self`, in the given order.
    /// The result is detached; use it to assemble minibatches.
    pub fn select_rows(&self, idx: &[usize]) -> Tensor {
        assert!(!self.shape.is_empty(), "select_rows needs rank >= 1");
        let rows = self.shape[0];
        let row_len = if rows == 0 { 0 } else { self.data.len() / rows };
        let mut data = Vec::with_capacity(idx.len() * row_len);
        for &i in idx {
            assert!(i < rows, "row {i} out of bounds (len {rows})");
            data.extend_from_slice(&self.data[i * row_len..(i + 1) * row_len]);
        }
        let mut shape = self.shape.clone();
        shape[0] = idx.len();
        Tensor {
            shape,
            data: Arc::new(data),
            node: None,
        }
    }

    /// Detached copy that shares the data buffer but forgets the tape link.
    pub fn detach(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::clone(&self.data),
            node: None,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn data_arc(&self) -> Arc<Vec<f64>> {
        Arc::clone(&self.data)
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Arc<Vec<f64>>, node: Option<NodeId>) -> Self {
        Tensor { shape, data, node }
    }

    /// Mutable access for in-place updates (optimizer steps). Copies only if
    /// the buffer is currently shared.
    pub fn data_mut(&mut self) -> &mut Vec<f64> {
        self.node = None;
        Arc::make_mut(&mut self.data)
    }
}
