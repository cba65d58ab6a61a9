//! Dense tensors in batch, channel, row, column order.
//!
//! A [`Tensor`] owns a flat row-major buffer together with a [`Shape`] of at
//! most four extents. Rank-2 tensors `[N, C]` are treated as `[N, C, 1, 1]`
//! by every spatial kernel, so the same code paths serve feature maps and
//! pooled vectors.
//!
//! Element type is generic over [`Real`]: `f32` is the working precision,
//! `f64` is the verification mode used by gradient checks and the
//! high-precision scan equivalence tests.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::iter::Sum;
use core::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;

use crate::{shape_err, Result};

/// Floating point element type of a tensor.
pub trait Real:
    Float
    + Default
    + fmt::Debug
    + fmt::Display
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Send
    + Sync
    + 'static
{
    const BITS: u32;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    #[inline]
    fn from_usize(v: usize) -> Self {
        Self::from_f64(v as f64)
    }
}

impl Real for f32 {
    const BITS: u32 = 32;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    const BITS: u32 = 64;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

pub const MAX_RANK: usize = 4;

/// Extents of a tensor, rank 0 through 4. Every extent is at least one.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    dims: [usize; MAX_RANK],
    rank: u8,
}

impl Shape {
    pub fn new(dims: &[usize]) -> Result<Self> {
        if dims.len() > MAX_RANK {
            return Err(shape_err!("rank {} exceeds the maximum of {MAX_RANK}", dims.len()));
        }
        if let Some(pos) = dims.iter().position(|&d| d == 0) {
            return Err(shape_err!("extent {pos} of {dims:?} is zero"));
        }
        let mut out = [1; MAX_RANK];
        out[..dims.len()].copy_from_slice(dims);
        Ok(Shape { dims: out, rank: dims.len() as u8 })
    }

    pub fn scalar() -> Self {
        Shape { dims: [1; MAX_RANK], rank: 0 }
    }

    pub fn nchw(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape::new(&[n, c, h, w]).expect("nonzero extents")
    }

    #[inline]
    pub fn dims(&self) -> &[usize] {
        &self.dims[..self.rank as usize]
    }

    #[inline]
    pub fn rank(&self) -> usize {
        self.rank as usize
    }

    pub fn numel(&self) -> usize {
        self.dims().iter().product()
    }

    /// Interprets the shape as `[N, C, H, W]`; rank-2 shapes get unit spatial extents.
    pub fn as_nchw(&self) -> Result<(usize, usize, usize, usize)> {
        match self.dims() {
            [n, c, h, w] => Ok((*n, *c, *h, *w)),
            [n, c] => Ok((*n, *c, 1, 1)),
            other => Err(shape_err!("expected [N, C] or [N, C, H, W], got {other:?}")),
        }
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.dims())
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.dims())
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let head = &self.data[..self.data.len().min(8)];
        f.debug_struct("Tensor").field("shape", &self.shape).field("head", &head).finish()
    }
}

impl<T: Real> Tensor<T> {
    pub fn new(dims: &[usize], data: Vec<T>) -> Result<Self> {
        let shape = Shape::new(dims)?;
        Self::from_shape(shape, data)
    }

    pub fn from_shape(shape: Shape, data: Vec<T>) -> Result<Self> {
        if shape.numel() != data.len() {
            return Err(shape_err!(
                "shape {shape} holds {} elements but {} were supplied",
                shape.numel(),
                data.len()
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        Self::full(dims, T::zero())
    }

    pub fn full(dims: &[usize], value: T) -> Result<Self> {
        let shape = Shape::new(dims)?;
        Ok(Tensor { shape, data: vec![value; shape.numel()] })
    }

    pub fn zeros_like(other: &Self) -> Self {
        Tensor { shape: other.shape, data: vec![T::zero(); other.data.len()] }
    }

    pub fn scalar(value: T) -> Self {
        Tensor { shape: Shape::scalar(), data: vec![value] }
    }

    pub fn from_fn(dims: &[usize], mut f: impl FnMut(usize) -> T) -> Result<Self> {
        let shape = Shape::new(dims)?;
        let data = (0..shape.numel()).map(&mut f).collect();
        Ok(Tensor { shape, data })
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        self.shape
    }

    #[inline]
    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    #[inline]
    pub fn numel(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn nchw(&self) -> Result<(usize, usize, usize, usize)> {
        self.shape.as_nchw()
    }

    /// Single element of a rank-0 or one-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.data.len() != 1 {
            return Err(shape_err!("item() needs one element, tensor has shape {}", self.shape));
        }
        Ok(self.data[0])
    }

    pub fn reshape(self, dims: &[usize]) -> Result<Self> {
        Self::new(dims, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.expect_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Tensor { shape: self.shape, data })
    }

    pub fn expect_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(shape_err!("{} vs {}", self.shape, other.shape));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.expect_same_shape(other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        self.expect_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs())))
    }

    pub fn l2_norm(&self) -> T {
        self.data.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor { shape: self.shape, data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect() }
    }

    /// Element at `[n, c, h, w]` (rank-2 tensors accept `h = w = 0`).
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        let (_, cc, hh, ww) = self.shape.as_nchw().expect("spatial tensor");
        self.data[((n * cc + c) * hh + h) * ww + w]
    }

    /// Swaps the two spatial axes of an `[N, C, H, W]` tensor.
    pub fn transpose_hw(&self) -> Result<Self> {
        let (n, c, h, w) = self.nchw()?;
        let mut out = vec![T::zero(); self.data.len()];
        for plane in 0..n * c {
            let src = &self.data[plane * h * w..(plane + 1) * h * w];
            let dst = &mut out[plane * h * w..(plane + 1) * h * w];
            for i in 0..h {
                for j in 0..w {
                    dst[j * h + i] = src[i * w + j];
                }
            }
        }
        Tensor::new(&[n, c, w, h], out)
    }

    /// Channel plane `c` of batch item `n`.
    pub fn plane(&self, n: usize, c: usize) -> Result<&[T]> {
        let (nn, cc, h, w) = self.nchw()?;
        if n >= nn || c >= cc {
            return Err(shape_err!("plane ({n}, {c}) out of range for {}", self.shape));
        }
        let hw = h * w;
        let start = (n * cc + c) * hw;
        Ok(&self.data[start..start + hw])
    }
}
