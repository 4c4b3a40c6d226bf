//! Dense rank-4 tensors in (n, c, h, w) order.

use std::fmt::{Debug, Display};
use std::io::{Read, Write};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;

use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Floating-point element type. Training runs in `f32`; gradient checks in `f64`.
pub trait Real:
    Float
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
    fn lit(x: f64) -> Self;
    fn f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn lit(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn lit(x: f64) -> Self {
        x
    }
    #[inline]
    fn f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape4 {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Result<Self> {
        if n == 0 || c == 0 || h == 0 || w == 0 {
            return Err(Error::Shape(format!(
                "extents must be positive, got ({n}, {c}, {h}, {w})"
            )));
        }
        n.checked_mul(c)
            .and_then(|x| x.checked_mul(h))
            .and_then(|x| x.checked_mul(w))
            .ok_or_else(|| Error::Shape(format!("({n}, {c}, {h}, {w}) overflows usize")))?;
        Ok(Shape4 { n, c, h, w })
    }

    /// For shapes already known to be valid.
    pub(crate) fn of(n: usize, c: usize, h: usize, w: usize) -> Self {
        debug_assert!(n > 0 && c > 0 && h > 0 && w > 0);
        Shape4 { n, c, h, w }
    }

    pub fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Elements per batch item.
    pub fn item_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn plane_len(&self) -> usize {
        self.h * self.w
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.c + c) * self.h + h) * self.w + w
    }

    pub fn with_batch(&self, n: usize) -> Self {
        Shape4::of(n, self.c, self.h, self.w)
    }
}

impl Display for Shape4 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Shape4,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: Shape4) -> Self {
        Tensor {
            shape,
            data: vec![T::zero(); shape.len()],
        }
    }

    pub fn filled(shape: Shape4, value: T) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn from_vec(shape: Shape4, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::Shape(format!(
                "shape {shape} needs {} values, got {}",
                shape.len(),
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    /// Builds a tensor by evaluating `f(n, c, h, w)` at every index.
    pub fn from_fn(shape: Shape4, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for h in 0..shape.h {
                    for w in 0..shape.w {
                        data.push(f(n, c, h, w));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    pub fn uniform(shape: Shape4, lo: f64, hi: f64, rng: &mut SeededRng) -> Self {
        let data = (0..shape.len()).map(|_| T::lit(rng.uniform(lo, hi))).collect();
        Tensor { shape, data }
    }

    pub fn shape(&self) -> Shape4 {
        self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.shape.offset(n, c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, v: T) {
        let o = self.shape.offset(n, c, h, w);
        self.data[o] = v;
    }

    /// All values of batch item `n`.
    pub fn item(&self, n: usize) -> &[T] {
        let len = self.shape.item_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn item_mut(&mut self, n: usize) -> &mut [T] {
        let len = self.shape.item_len();
        &mut self.data[n * len..(n + 1) * len]
    }

    /// Spatial plane `(n, c)`.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let len = self.shape.plane_len();
        let start = (n * self.shape.c + c) * len;
        &self.data[start..start + len]
    }

    pub fn reshape(self, shape: Shape4) -> Result<Self> {
        if shape.len() != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {} into {shape}",
                self.shape
            )));
        }
        Ok(Tensor {
            shape,
            data: self.data,
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&x| U::lit(x.f64())).collect(),
        }
    }

    /// Batch items `start..end` as a new tensor.
    pub fn slice_batch(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.shape.n {
            return Err(Error::Shape(format!(
                "batch range {start}..{end} outside {}",
                self.shape
            )));
        }
        let len = self.shape.item_len();
        Ok(Tensor {
            shape: self.shape.with_batch(end - start),
            data: self.data[start * len..end * len].to_vec(),
        })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }
}

/// Collapses (c, h, w) into the channel axis: shape (n, c·h·w, 1, 1).
pub fn flatten<T: Real>(t: &Tensor<T>) -> Tensor<T> {
    let s = t.shape();
    Tensor {
        shape: Shape4::of(s.n, s.item_len(), 1, 1),
        data: t.data.clone(),
    }
}

/// Reverses every (n, c) plane along both spatial axes.
pub fn rot180<T: Real>(k: &Tensor<T>) -> Tensor<T> {
    let s = k.shape();
    let plane = s.plane_len();
    let mut data = Vec::with_capacity(s.len());
    for chunk in k.data.chunks_exact(plane) {
        data.extend(chunk.iter().rev().copied());
    }
    Tensor { shape: s, data }
}

/// Writes the tensor blob: four little-endian u64 extents (n, c, h, w) then
/// little-endian f32 values.
pub fn write_blob<T: Real, W: Write>(t: &Tensor<T>, out: &mut W) -> std::io::Result<()> {
    let s = t.shape();
    for extent in [s.n, s.c, s.h, s.w] {
        out.write_all(&(extent as u64).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(t.len() * 4);
    for &v in t.data() {
        buf.extend_from_slice(&(v.f64() as f32).to_le_bytes());
    }
    out.write_all(&buf)
}

pub fn blob_len(shape: Shape4) -> usize {
    32 + 4 * shape.len()
}

pub fn read_blob<T: Real, R: Read>(input: &mut R) -> Result<Tensor<T>> {
    let mut header = [0u8; 32];
    input
        .read_exact(&mut header)
        .map_err(|_| Error::Truncated("tensor header".into()))?;
    let mut ext = [0usize; 4];
    for (i, e) in ext.iter_mut().enumerate() {
        let v = u64::from_le_bytes(header[i * 8..i * 8 + 8].try_into().unwrap());
        *e = usize::try_from(v).map_err(|_| Error::Format(format!("extent {v} too large")))?;
    }
    let shape = Shape4::new(ext[0], ext[1], ext[2], ext[3])
        .map_err(|e| Error::Format(format!("bad tensor header: {e}")))?;
    let mut bytes = vec![0u8; shape.len() * 4];
    input
        .read_exact(&mut bytes)
        .map_err(|_| Error::Truncated(format!("tensor data for {shape}")))?;
    let data = bytes
        .chunks_exact(4)
        .map(|b| T::lit(f32::from_le_bytes(b.try_into().unwrap()) as f64))
        .collect();
    Ok(Tensor { shape, data })
}
