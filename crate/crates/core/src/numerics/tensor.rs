use alloc::vec;
use alloc::vec::Vec;

use super::Real;
use crate::{Error, Result};

/// Row-major dense tensor.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Tensor<F = f32> {
    shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: Real> Tensor<F> {
    pub fn new(shape: Vec<usize>, data: Vec<F>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape {
                expected,
                found: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![F::zero(); len],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.shape)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Number of entries in one slice along the leading axis.
    pub fn row_len(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[F] {
        let w = self.row_len();
        &self.data[i * w..(i + 1) * w]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [F] {
        let w = self.row_len();
        &mut self.data[i * w..(i + 1) * w]
    }

    pub fn fill(&mut self, value: F) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn squared_norm(&self) -> f64 {
        self.data.iter().map(|v| v.f64() * v.f64()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<G: Real>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| G::of(v.f64())).collect(),
        }
    }
}

/// `y = W x` for a square row-major `W`.
#[inline]
pub(crate) fn matvec<F: Real>(w: &[F], x: &[F], y: &mut [F]) {
    let d = x.len();
    for (i, yi) in y.iter_mut().enumerate() {
        *yi = super::dot(&w[i * d..(i + 1) * d], x);
    }
}

/// `y += W^T x` for a square row-major `W`.
#[inline]
pub(crate) fn matvec_t_acc<F: Real>(w: &[F], x: &[F], y: &mut [F]) {
    let d = x.len();
    for (i, &xi) in x.iter().enumerate() {
        super::axpy(xi, &w[i * d..(i + 1) * d], y);
    }
}

/// `G += a b^T`
#[inline]
pub(crate) fn outer_acc<F: Real>(a: &[F], b: &[F], g: &mut [F]) {
    let d = b.len();
    for (i, &ai) in a.iter().enumerate() {
        super::axpy(ai, b, &mut g[i * d..(i + 1) * d]);
    }
}
