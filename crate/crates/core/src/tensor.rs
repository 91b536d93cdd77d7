//! Dense row-major tensors over the crate scalar type.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::DiffError;

/// Crate scalar: f64 by default, f32 behind the `f32` feature.
#[cfg(feature = "f32")]
pub type Real = f32;
#[cfg(not(feature = "f32"))]
pub type Real = f64;

/// Dense tensor with row-major storage. Ops in this crate use rank-2
/// tensors; scalars are 1x1 and column vectors are nx1.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<Real>,
}

impl Tensor {
    /// Builds a tensor, checking that the shape product matches the data
    /// length. Finite entries are enforced in debug builds only; release
    /// paths that must reject NaN/Inf call [`Tensor::all_finite`].
    pub fn new(shape: Vec<usize>, data: Vec<Real>) -> Result<Self, DiffError> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) || numel != data.len() {
            return Err(DiffError::BadTensor {
                shape,
                data_len: data.len(),
            });
        }
        debug_assert!(
            data.iter().all(|v| v.is_finite()),
            "tensor constructed with non-finite entries"
        );
        Ok(Tensor { shape, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            shape: vec![rows, cols],
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: Real) -> Self {
        Tensor {
            shape: vec![rows, cols],
            data: vec![value; rows * cols],
        }
    }

    /// 1x1 tensor.
    pub fn scalar(value: Real) -> Self {
        Tensor {
            shape: vec![1, 1],
            data: vec![value],
        }
    }

    /// nx1 column vector.
    pub fn column(values: &[Real]) -> Self {
        Tensor {
            shape: vec![values.len(), 1],
            data: values.to_vec(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        if self.shape.len() > 1 {
            self.shape[1]
        } else {
            1
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn data(&self) -> &[Real] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Real] {
        &mut self.data
    }

    /// Scalar value of a 1x1 tensor.
    pub fn item(&self) -> Real {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    pub fn get(&self, row: usize, col: usize) -> Real {
        self.data[row * self.cols() + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: Real) {
        let c = self.cols();
        self.data[row * c + col] = value;
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Index of the largest entry; ties resolve to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.data.iter().enumerate() {
            if *v > self.data[best] {
                best = i;
            }
        }
        best
    }

    pub fn transposed(&self) -> Tensor {
        let (r, c) = (self.rows(), self.cols());
        let mut out = Tensor::zeros(c, r);
        for i in 0..r {
            for j in 0..c {
                out.data[j * r + i] = self.data[i * c + j];
            }
        }
        out
    }

    pub(crate) fn same_shape(&self, other: &Tensor) -> bool {
        self.shape == other.shape
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_product_must_match_data() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        let err = Tensor::new(vec![2, 3], vec![0.0; 5]).unwrap_err();
        assert!(matches!(err, DiffError::BadTensor { .. }));
        assert!(Tensor::new(vec![0, 3], vec![]).is_err());
    }

    #[test]
    fn transpose_round_trip() {
        let t = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let tt = t.transposed().transposed();
        assert_eq!(t, tt);
        assert_eq!(t.transposed().get(2, 1), 6.0);
    }

    #[test]
    fn argmax_breaks_ties_low() {
        let t = Tensor::column(&[0.5, 0.7, 0.7, 0.1]);
        assert_eq!(t.argmax(), 1);
    }

    #[test]
    #[should_panic]
    #[cfg(debug_assertions)]
    fn debug_rejects_non_finite() {
        let _ = Tensor::new(vec![1, 1], vec![Real::NAN]);
    }
}
