//! Dense row-major n-dimensional array.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Contiguous row-major tensor. `shape.iter().product() == data.len()` always holds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, T::zero())
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    /// Builds a tensor, checking only that the shape matches the buffer.
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("zero-sized dimension in {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Like [`Tensor::from_vec`] but also rejects NaN and infinities. Used for data read from files.
    pub fn from_vec_finite(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Self::from_vec(shape, data)
    }

    /// Stacks equal-length rows into a `[rows, len]` tensor.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let len = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != len) {
            return Err(Error::Shape("rows have different lengths".into()));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::from_vec(&[rows.len(), len], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Number of rows of a 2-D tensor (the leading dimension in general).
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Length of the trailing dimension.
    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&0)
    }

    /// Slice of row `r` when viewing the tensor as `[shape[0], rest]`.
    pub fn row(&self, r: usize) -> &[T] {
        let stride = self.data.len() / self.shape[0];
        &self.data[r * stride..(r + 1) * stride]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        let stride = self.data.len() / self.shape[0];
        &mut self.data[r * stride..(r + 1) * stride]
    }

    #[inline]
    pub fn at2(&self, r: usize, c: usize) -> T {
        self.data[r * self.shape[1] + c]
    }

    #[inline]
    pub fn set2(&mut self, r: usize, c: usize, v: T) {
        let w = self.shape[1];
        self.data[r * w + c] = v;
    }

    /// Gathers a subset of leading-dimension slices, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let n = self.shape[0];
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::OutOfRange { index: bad, len: n });
        }
        if rows.is_empty() {
            return Err(Error::Shape("empty row selection".into()));
        }
        let mut data = Vec::with_capacity(rows.len() * self.data.len() / n);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        let mut shape = self.shape.clone();
        shape[0] = rows.len();
        Ok(Tensor { shape, data })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.to_f64_lossy())).collect(),
        }
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: T, other: &Tensor<T>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, s: T) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max(&self) -> T {
        self.data
            .iter()
            .copied()
            .fold(T::neg_infinity(), |a, b| if b > a { b } else { a })
    }

    pub fn min(&self) -> T {
        self.data
            .iter()
            .copied()
            .fold(T::infinity(), |a, b| if b < a { b } else { a })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_buffer() {
        assert!(Tensor::<f64>::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f64>::from_vec(&[0, 3], vec![]).is_err());
        let t = Tensor::<f64>::from_vec(&[2, 3], (0..6).map(f64::from).collect()).unwrap();
        assert_eq!(t.row(1), &[3.0, 4.0, 5.0]);
        assert_eq!(t.at2(0, 2), 2.0);
    }

    #[test]
    fn rejects_nan_from_io() {
        let err = Tensor::<f32>::from_vec_finite(&[3], vec![1.0, f32::NAN, 0.0]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { index: 1 }));
        assert!(Tensor::<f32>::from_vec_finite(&[1], vec![f32::INFINITY]).is_err());
    }

    #[test]
    fn select_rows_keeps_order_and_duplicates() {
        let t = Tensor::<f64>::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let s = t.select_rows(&[1, 0, 1]).unwrap();
        assert_eq!(s.shape(), &[3, 2]);
        assert_eq!(s.data(), &[3.0, 4.0, 1.0, 2.0, 3.0, 4.0]);
        assert!(t.select_rows(&[2]).is_err());
    }
}
