//! Dense `f64` tensors and a reverse-mode differentiation tape.
//!
//! [`Tensor`] is a plain value: a shape plus row-major data. Forward kernels
//! in [`kernels`] operate on tensors directly. To differentiate, values are
//! registered on a [`Tape`], which records every operation applied to the
//! resulting [`Var`] handles and replays them backwards in [`Tape::backward`].
//! A tape lives for one forward/backward pass and is then dropped.

pub mod gradcheck;
pub mod kernels;
mod tape;

pub use kernels::{Activation, ConvAlgo};
pub use tape::{Gradients, Tape, Var};

use crate::error::{Error, Result};

/// An N-dimensional array of `f64` in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(
                "tensor",
                format!(
                    "shape {shape:?} needs {expected} elements, got {}",
                    data.len()
                ),
            ));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    /// A zero-dimensional tensor holding one value.
    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(f).collect(),
        }
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        match self.data.as_slice() {
            [v] => Ok(*v),
            _ => Err(Error::shape(
                "item",
                format!("expected one element, shape is {:?}", self.shape),
            )),
        }
    }

    /// The shape as `[n, c, h, w]`, or an error naming `op` if not 4-D.
    pub fn dims4(&self, op: &'static str) -> Result<[usize; 4]> {
        match self.shape.as_slice() {
            &[n, c, h, w] => Ok([n, c, h, w]),
            other => Err(Error::shape(op, format!("expected 4-D tensor, got {other:?}"))),
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::mismatch("reshape", &self.shape, shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::mismatch("zip_map", &self.shape, &other.shape));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Adds `other` into `self` elementwise.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::mismatch("add_assign", &self.shape, &other.shape));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copies one sample out of a batched tensor, keeping a leading 1.
    pub fn batch_item(&self, n: usize) -> Result<Tensor> {
        let Some((&batch, rest)) = self.shape.split_first() else {
            return Err(Error::shape("batch_item", "scalar has no batch axis"));
        };
        if n >= batch {
            return Err(Error::shape(
                "batch_item",
                format!("index {n} out of range for batch of {batch}"),
            ));
        }
        let stride: usize = rest.iter().product();
        let mut shape = vec![1];
        shape.extend_from_slice(rest);
        Tensor::new(&shape, self.data[n * stride..(n + 1) * stride].to_vec())
    }

    /// Stacks equally shaped tensors along a new leading axis, or along the
    /// existing leading axis when every input already has extent 1 there.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| Error::shape("stack", "no tensors to stack"))?;
        for t in items {
            if t.shape != first.shape {
                return Err(Error::mismatch("stack", &first.shape, &t.shape));
            }
        }
        let mut shape = first.shape.clone();
        if shape.first() == Some(&1) {
            shape[0] = items.len();
        } else {
            shape.insert(0, items.len());
        }
        let data = items.iter().flat_map(|t| t.data.iter().copied()).collect();
        Tensor::new(&shape, data)
    }
}
