//! Dense row-major tensor over a generic scalar.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense tensor: a shape plus row-major data. Every public constructor
/// checks that the element count matches the shape and that all entries
/// are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorG<S: Scalar> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> TensorG<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::ShapeMismatch { expected: shape.clone(), got: vec![data.len()] });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("tensor construction"));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Self { shape, data: vec![S::zero(); n] }
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

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    /// Consume the tensor and return its raw buffer.
    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    /// Gather rows along the first axis, preserving the remaining axes.
    /// Used to materialize mini-batches from a dataset.
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Self> {
        if self.shape.is_empty() {
            return Err(Error::ShapeMismatch { expected: vec![1], got: vec![0] });
        }
        let row: usize = self.shape[1..].iter().product();
        let n = self.shape[0];
        let mut data = Vec::with_capacity(indices.len() * row);
        for &i in indices {
            if i >= n {
                return Err(Error::InvalidArgument(format!("row index {i} out of {n}")));
            }
            data.extend_from_slice(&self.data[i * row..(i + 1) * row]);
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Ok(Self { shape, data })
    }
}
