//! Uniform access to the tensors of a parameter set.
//!
//! Every model exposes its weights as an ordered list of named tensors. The
//! order is the canonical parameter ordering of the model and is what the
//! checkpoint format, the gradient checker and the optimizer iterate over.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Vector};

/// Shape of one parameter tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Matrix { rows: usize, cols: usize },
    Vector { len: usize },
}

impl Shape {
    pub fn numel(&self) -> usize {
        match *self {
            Shape::Matrix { rows, cols } => rows * cols,
            Shape::Vector { len } => len,
        }
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Shape::Matrix { rows, cols } => write!(f, "{rows}x{cols}"),
            Shape::Vector { len } => write!(f, "[{len}]"),
        }
    }
}

pub struct TensorRef<'a> {
    pub name: String,
    pub shape: Shape,
    pub data: &'a [f64],
}

pub struct TensorMut<'a> {
    pub name: String,
    pub shape: Shape,
    pub data: &'a mut [f64],
}

pub(crate) fn mref<'a>(name: impl Into<String>, m: &'a Matrix) -> TensorRef<'a> {
    TensorRef {
        name: name.into(),
        shape: Shape::Matrix {
            rows: m.rows(),
            cols: m.cols(),
        },
        data: m.as_slice(),
    }
}

pub(crate) fn vref<'a>(name: impl Into<String>, v: &'a Vector) -> TensorRef<'a> {
    TensorRef {
        name: name.into(),
        shape: Shape::Vector { len: v.len() },
        data: v.as_slice(),
    }
}

pub(crate) fn mmut<'a>(name: impl Into<String>, m: &'a mut Matrix) -> TensorMut<'a> {
    let shape = Shape::Matrix {
        rows: m.rows(),
        cols: m.cols(),
    };
    TensorMut {
        name: name.into(),
        shape,
        data: m.as_mut_slice(),
    }
}

pub(crate) fn vmut<'a>(name: impl Into<String>, v: &'a mut Vector) -> TensorMut<'a> {
    let shape = Shape::Vector { len: v.len() };
    TensorMut {
        name: name.into(),
        shape,
        data: v.as_mut_slice(),
    }
}

pub trait Parameters: Clone + Send + Sync {
    fn tensors(&self) -> Vec<TensorRef<'_>>;
    fn tensors_mut(&mut self) -> Vec<TensorMut<'_>>;

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.fill(0.0);
        z
    }

    fn fill(&mut self, value: f64) {
        for t in self.tensors_mut() {
            t.data.fill(value);
        }
    }

    fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    /// Every scalar, tensors concatenated in canonical order.
    fn to_flat(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|t| t.data.iter().copied()).collect()
    }

    fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_scalars() {
            return Err(Error::mismatch("set_flat", self.num_scalars(), flat.len()));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.data.len();
            t.data.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// `self += k * other`, tensor by tensor.
    fn axpy(&mut self, k: f64, other: &Self) -> Result<()> {
        let src = other.tensors();
        let dst = self.tensors_mut();
        if src.len() != dst.len() {
            return Err(Error::mismatch("axpy", dst.len(), src.len()));
        }
        for (d, s) in dst.into_iter().zip(src) {
            if d.shape != s.shape {
                return Err(Error::mismatch(
                    "axpy",
                    format!("{} {}", d.name, d.shape),
                    format!("{} {}", s.name, s.shape),
                ));
            }
            for (a, b) in d.data.iter_mut().zip(s.data) {
                *a += k * b;
            }
        }
        Ok(())
    }

    /// Overwrite every scalar with a draw from U(-range, range).
    fn randomize(&mut self, rng: &mut impl Rng, range: f64) {
        for t in self.tensors_mut() {
            for z in t.data.iter_mut() {
                *z = rng.gen_range(-range..=range);
            }
        }
    }

    fn max_abs(&self) -> f64 {
        self.tensors().iter().flat_map(|t| t.data.iter()).fold(0.0, |m, z| m.max(z.abs()))
    }

    fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|z| z.is_finite()))
    }
}
