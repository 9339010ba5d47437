//! Dense row-major tensors over f32/f64 scalars.
//!
//! `Tensor` is plain data: shape plus a flat buffer. Gradient bookkeeping
//! lives on the [`Tape`](crate::diff::Tape), not here, so tensors without an
//! active tape reference are immutable values that can be shared freely
//! across threads.

use crate::error::{Error, Result};
use num_traits::Float;

/// Scalar element type of tensors. Tests and gradient checks run at f64;
/// training loops may run at f32.
pub trait Scalar:
    Float + std::fmt::Debug + std::fmt::Display + Send + Sync + 'static
{
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}

/// Dense n-dimensional array, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T: Scalar> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); n],
        }
    }

    pub fn filled(shape: &[usize], v: T) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; n],
        }
    }

    pub fn scalar(v: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::InvalidArgument {
                op: "Tensor::from_vec",
                msg: format!("shape {shape:?} wants {n} elements, got {}", data.len()),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
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

    /// Interpret as a 2D map, returning (rows, cols).
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [h, w] => Ok((*h, *w)),
            _ => Err(Error::InvalidArgument {
                op: "dims2",
                msg: format!("expected rank-2 tensor, got shape {:?}", self.shape),
            }),
        }
    }

    /// Interpret as channelled 2D: [C,H,W], or [H,W] as C=1.
    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape.as_slice() {
            [c, h, w] => Ok((*c, *h, *w)),
            [h, w] => Ok((1, *h, *w)),
            _ => Err(Error::InvalidArgument {
                op: "dims3",
                msg: format!("expected rank-2 or rank-3 tensor, got shape {:?}", self.shape),
            }),
        }
    }

    #[inline]
    pub fn at2(&self, r: usize, c: usize) -> T {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[r * self.shape[1] + c]
    }

    #[inline]
    pub fn set2(&mut self, r: usize, c: usize, v: T) {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[r * self.shape[1] + c] = v;
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
        debug_assert_eq!(self.shape, other.shape);
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// Elementwise accumulate: self += other. Shapes must match.
    pub fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub fn scale_assign(&mut self, s: T) {
        for a in self.data.iter_mut() {
            *a = *a * s;
        }
    }

    pub fn max_value(&self) -> T {
        self.data.iter().cloned().fold(T::neg_infinity(), T::max)
    }

    pub fn min_value(&self) -> T {
        self.data.iter().cloned().fold(T::infinity(), T::min)
    }

    pub fn sum_value(&self) -> T {
        self.data.iter().cloned().fold(T::zero(), |a, b| a + b)
    }

    pub fn mean_value(&self) -> T {
        self.sum_value() / T::from_f64(self.numel() as f64)
    }

    /// Flat index of the maximum element (first hit on ties).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        let mut bv = T::neg_infinity();
        for (i, &v) in self.data.iter().enumerate() {
            if v > bv {
                bv = v;
                best = i;
            }
        }
        best
    }

    pub fn is_all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// True when every element equals the first (degenerate, signal-free map).
    pub fn is_constant(&self) -> bool {
        match self.data.first() {
            Some(&v0) => self.data.iter().all(|&v| v == v0),
            None => true,
        }
    }

    /// Cast between scalar widths through f64.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
        }
    }
}

/// Complex-valued tensor as split real/imaginary parts of identical shape.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexTensor<T: Scalar> {
    pub re: Tensor<T>,
    pub im: Tensor<T>,
}

impl<T: Scalar> ComplexTensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        ComplexTensor {
            re: Tensor::zeros(shape),
            im: Tensor::zeros(shape),
        }
    }

    pub fn new(re: Tensor<T>, im: Tensor<T>) -> Result<Self> {
        if re.shape() != im.shape() {
            return Err(Error::ShapeMismatch {
                op: "ComplexTensor::new",
                lhs: re.shape().to_vec(),
                rhs: im.shape().to_vec(),
            });
        }
        Ok(ComplexTensor { re, im })
    }

    pub fn shape(&self) -> &[usize] {
        self.re.shape()
    }

    /// |z| elementwise.
    pub fn magnitude(&self) -> Tensor<T> {
        self.re.zip_map(&self.im, |a, b| (a * a + b * b).sqrt())
    }
}
