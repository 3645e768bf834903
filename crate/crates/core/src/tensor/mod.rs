//! Dense rank-4 `(N, C, H, W)` tensors and the kernels built on them.
//!
//! Layout is row-major with `W` fastest. A tensor is an immutable value once
//! returned from an operation; kernels allocate their outputs.

pub(crate) mod conv;
mod geometry;
mod pool;

pub use conv::{conv2d_backward, conv2d_forward, ConvGrads, ConvSpec};
pub use geometry::{
    concat_channels, concat_channels_backward, crop, mirror_h, resize_bilinear, slice_channels,
};
pub use pool::{
    avgpool_global, avgpool_global_backward, maxpool2d, maxpool2d_backward, maxpool2d_padded,
    PoolIndices, PoolSpec,
};

use std::fmt;

use crate::{Error, Precision, Result, Scalar};

/// `(n, c, h, w)` extents; every dimension is at least 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Result<Self> {
        if n == 0 || c == 0 || h == 0 || w == 0 {
            return Err(Error::geometry(
                "shape",
                format!("all dims must be >= 1, got {n}x{c}x{h}x{w}"),
            ));
        }
        Ok(Shape { n, c, h, w })
    }

    pub fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elements per sample, `c * h * w`.
    pub fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn with_n(self, n: usize) -> Self {
        Shape { n, ..self }
    }

    pub fn with_c(self, c: usize) -> Self {
        Shape { c, ..self }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor<{}>({})", std::any::type_name::<T>(), self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: vec![T::ZERO; shape.len()],
        }
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::shape(
                "tensor",
                format!("{} elements for {shape}", shape.len()),
                format!("{} elements", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    /// Builds a tensor from `f64` values, converting to the element type.
    pub fn from_f64(shape: Shape, data: &[f64]) -> Result<Self> {
        Self::from_vec(shape, data.iter().map(|&v| T::from_f64(v)).collect())
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn precision(&self) -> Precision {
        T::PRECISION
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        let s = self.shape;
        ((n * s.c + c) * s.h + h) * s.w + w
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.index(n, c, h, w)]
    }

    /// Contiguous data of sample `n`.
    pub fn sample(&self, n: usize) -> &[T] {
        let len = self.shape.sample_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn sample_mut(&mut self, n: usize) -> &mut [T] {
        let len = self.shape.sample_len();
        &mut self.data[n * len..(n + 1) * len]
    }

    /// Same data viewed under a new shape of identical length.
    pub fn reshape(self, shape: Shape) -> Result<Self> {
        if shape.len() != self.shape.len() {
            return Err(Error::shape("reshape", self.shape, shape));
        }
        Ok(Tensor {
            shape,
            data: self.data,
        })
    }

    /// Copies samples `start..start + count` into a new batch.
    pub fn batch_slice(&self, start: usize, count: usize) -> Result<Self> {
        if count == 0 || start + count > self.shape.n {
            return Err(Error::geometry(
                "batch_slice",
                format!("range {start}..{} outside batch of {}", start + count, self.shape.n),
            ));
        }
        let len = self.shape.sample_len();
        Ok(Tensor {
            shape: self.shape.with_n(count),
            data: self.data[start * len..(start + count) * len].to_vec(),
        })
    }

    /// Stacks single-sample tensors of equal shape into one batch.
    pub fn stack(items: &[Tensor<T>]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::invalid("stack of zero tensors"))?;
        let per = first.shape.with_n(1);
        let mut data = Vec::with_capacity(per.len() * items.len());
        let mut n = 0;
        for t in items {
            if t.shape.with_n(1) != per {
                return Err(Error::shape("stack", per, t.shape));
            }
            data.extend_from_slice(&t.data);
            n += t.shape.n;
        }
        Ok(Tensor {
            shape: per.with_n(n),
            data,
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn convert<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Fails with the given name if any element is NaN or infinite.
    pub fn ensure_finite(&self, name: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite {
                name: name.to_string(),
            })
        }
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}
