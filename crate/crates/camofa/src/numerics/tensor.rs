//! Dense row-major tensors over `f32` or `f64`.

use std::fmt;

use num_traits::Float;

use super::NumericsError;
use super::Rng;

/// Scalar element type of a [`Tensor`]. Implemented for `f32` and `f64`.
pub trait Element:
    Float + fmt::Debug + fmt::Display + Default + Send + Sync + 'static
{
    /// Name used in checkpoint headers.
    const DTYPE: &'static str;
    /// Bytes per element in the checkpoint payload.
    const BYTE_WIDTH: usize;

    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Element for f32 {
    const DTYPE: &'static str = "f32";
    const BYTE_WIDTH: usize = 4;

    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4-byte slice"))
    }
}

impl Element for f64 {
    const DTYPE: &'static str = "f64";
    const BYTE_WIDTH: usize = 8;

    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8-byte slice"))
    }
}

/// Dense tensor: a shape and a row-major flat buffer of matching length.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Element> Tensor<T> {
    /// Builds a tensor, checking that the buffer length matches the shape.
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self, NumericsError> {
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(NumericsError::BadBuffer {
                shape: shape.to_vec(),
                expected: numel,
                actual: data.len(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    /// One-element tensor of shape `[1]`.
    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Uniform entries in `[lo, hi)` drawn from the seeded generator.
    pub fn rand_uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut Rng) -> Self {
        let numel: usize = shape.iter().product();
        let data = (0..numel)
            .map(|_| T::from_f64(rng.uniform(lo, hi)))
            .collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    /// Standard-normal entries drawn from the seeded generator.
    pub fn randn(shape: &[usize], rng: &mut Rng) -> Self {
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| T::from_f64(rng.normal())).collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
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

    /// Value of a one-element tensor.
    pub fn item(&self) -> T {
        debug_assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    /// Reinterprets the buffer under a new shape of equal length.
    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self, NumericsError> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(NumericsError::BadBuffer {
                shape: shape.to_vec(),
                expected: numel,
                actual: self.data.len(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, rhs: &Self, f: impl Fn(T, T) -> T) -> Result<Self, NumericsError> {
        if self.shape != rhs.shape {
            return Err(NumericsError::ShapeMismatch {
                op: "zip_map",
                lhs: self.shape.clone(),
                rhs: rhs.shape.clone(),
            });
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, rhs: &Self) -> Result<Self, NumericsError> {
        self.zip_map(rhs, |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Self) -> Result<Self, NumericsError> {
        self.zip_map(rhs, |a, b| a - b)
    }

    pub fn mul(&self, rhs: &Self) -> Result<Self, NumericsError> {
        self.zip_map(rhs, |a, b| a * b)
    }

    pub fn scale(&self, c: T) -> Self {
        self.map(|x| x * c)
    }

    /// In-place `self += rhs`; shapes must already match.
    pub fn add_assign(&mut self, rhs: &Self) {
        debug_assert_eq!(self.shape, rhs.shape);
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a = *a + *b;
        }
    }

    pub fn fill(&mut self, value: T) {
        self.data.fill(value);
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &x| acc + x)
    }

    pub fn max_abs(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |acc, &x| if x.abs() > acc { x.abs() } else { acc })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Flat inner product; shapes must match in length.
    pub fn dot(&self, rhs: &Self) -> T {
        debug_assert_eq!(self.data.len(), rhs.data.len());
        self.data
            .iter()
            .zip(&rhs.data)
            .fold(T::zero(), |acc, (&a, &b)| acc + a * b)
    }

    /// Casts every element through `f64`.
    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| U::from_f64(x.to_f64())).collect(),
        }
    }
}

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)
        } else {
            write!(f, " [{:?}, {:?}, ..]", self.data[0], self.data[1])
        }
    }
}
