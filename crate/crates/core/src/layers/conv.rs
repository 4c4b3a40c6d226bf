//! 2-D cross-correlation (what convolutional layers compute), true
//! convolution, and the normalized feature-match score.
//!
//! The forward pass lowers each batch item to an im2col matrix of shape
//! `(c_in·kh·kw) × (oh·ow)` and multiplies it by the `c_out × (c_in·kh·kw)`
//! kernel matrix. Out-of-range receptive-field cells read as zero.

use crate::error::{Error, Result};
use crate::layers::kernels::{gemm_nn, gemm_nt, gemm_tn};
use crate::tensor::{rot180, Real, Shape4, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T = f32> {
    /// Shape `(c_out, c_in, kh, kw)`.
    pub kernels: Tensor<T>,
    pub bias: Vec<T>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Real> ConvParams<T> {
    pub fn new(kernels: Tensor<T>, bias: Vec<T>, stride: usize, padding: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::Config("convolution stride must be ≥ 1".into()));
        }
        if bias.len() != kernels.shape().n {
            return Err(Error::Shape(format!(
                "bias length {} does not match {} output channels",
                bias.len(),
                kernels.shape().n
            )));
        }
        Ok(ConvParams {
            kernels,
            bias,
            stride,
            padding,
        })
    }

    pub fn c_out(&self) -> usize {
        self.kernels.shape().n
    }

    pub fn c_in(&self) -> usize {
        self.kernels.shape().c
    }

    pub fn kernel_size(&self) -> (usize, usize) {
        (self.kernels.shape().h, self.kernels.shape().w)
    }

    /// Output spatial extent for an `h × w` input.
    pub fn output_extent(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (kh, kw) = self.kernel_size();
        let (ph, pw) = (h + 2 * self.padding, w + 2 * self.padding);
        if kh > ph || kw > pw {
            return Err(Error::Shape(format!(
                "kernel {kh}×{kw} larger than padded input {ph}×{pw}"
            )));
        }
        Ok(((ph - kh) / self.stride + 1, (pw - kw) / self.stride + 1))
    }

    fn check_input(&self, input: Shape4) -> Result<Geometry> {
        if input.c != self.c_in() {
            return Err(Error::Shape(format!(
                "input {input} has {} channels but kernels {} expect {}",
                input.c,
                self.kernels.shape(),
                self.c_in()
            )));
        }
        let (oh, ow) = self.output_extent(input.h, input.w)?;
        let (kh, kw) = self.kernel_size();
        Ok(Geometry {
            c: input.c,
            h: input.h,
            w: input.w,
            kh,
            kw,
            stride: self.stride,
            pad: self.padding,
            oh,
            ow,
        })
    }
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Input column feeding output column `ox` at kernel column `j`, if in range.
    #[inline]
    fn src(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        let pos = (o * self.stride + k).checked_sub(self.pad)?;
        (pos < extent).then_some(pos)
    }

    /// Output columns `lo..hi` whose input column at kernel column `j` is in range.
    #[inline]
    fn valid_cols(&self, j: usize) -> (usize, usize) {
        let s = self.stride;
        let lo = self.pad.saturating_sub(j).div_ceil(s).min(self.ow);
        let hi = if self.w + self.pad > j {
            (self.w + self.pad - j).div_ceil(s).min(self.ow)
        } else {
            0
        };
        (lo, hi.max(lo))
    }

    fn im2col<T: Real>(&self, x: &[T], cols: &mut [T]) {
        let p = self.cols();
        for ci in 0..self.c {
            let plane = &x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = (ci * self.kh + i) * self.kw + j;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    let (lo, hi) = self.valid_cols(j);
                    for oy in 0..self.oh {
                        let d = &mut dst[oy * self.ow..(oy + 1) * self.ow];
                        let Some(iy) = self.src(oy, i, self.h) else {
                            d.fill(T::zero());
                            continue;
                        };
                        let src = &plane[iy * self.w..(iy + 1) * self.w];
                        d[..lo].fill(T::zero());
                        d[hi..].fill(T::zero());
                        if lo < hi {
                            let first = lo * self.stride + j - self.pad;
                            if self.stride == 1 {
                                d[lo..hi].copy_from_slice(&src[first..first + hi - lo]);
                            } else {
                                for (v, &sv) in d[lo..hi].iter_mut().zip(src[first..].iter().step_by(self.stride)) {
                                    *v = sv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Real>(&self, cols: &[T], dx: &mut [T]) {
        let p = self.cols();
        for ci in 0..self.c {
            let plane = &mut dx[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = (ci * self.kh + i) * self.kw + j;
                    let src = &cols[row * p..(row + 1) * p];
                    let (lo, hi) = self.valid_cols(j);
                    if lo >= hi {
                        continue;
                    }
                    for oy in 0..self.oh {
                        let Some(iy) = self.src(oy, i, self.h) else {
                            continue;
                        };
                        let first = lo * self.stride + j - self.pad;
                        let dst = &mut plane[iy * self.w + first..(iy + 1) * self.w];
                        let s = &src[oy * self.ow + lo..oy * self.ow + hi];
                        for (d, &v) in dst.iter_mut().step_by(self.stride).zip(s) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }
}

/// `out(n,o,y,x) = bias(o) + Σ_{c,i,j} in(n, c, y·s − pad + i, x·s − pad + j) · k(o,c,i,j)`
pub fn cross_correlate2d<T: Real>(input: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>> {
    let s = input.shape();
    let g = p.check_input(s)?;
    let c_out = p.c_out();
    let (k, np) = (g.rows(), g.cols());
    let mut out = Tensor::zeros(Shape4::of(s.n, c_out, g.oh, g.ow));
    let mut cols = vec![T::zero(); k * np];
    for n in 0..s.n {
        g.im2col(input.item(n), &mut cols);
        let o = out.item_mut(n);
        for (row, &b) in o.chunks_exact_mut(np).zip(&p.bias) {
            row.fill(b);
        }
        gemm_nn(c_out, np, k, p.kernels.data(), &cols, o);
    }
    Ok(out)
}

/// True convolution: cross-correlation with every kernel plane rotated 180°.
pub fn convolve2d<T: Real>(input: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>> {
    let flipped = ConvParams {
        kernels: rot180(&p.kernels),
        bias: p.bias.clone(),
        stride: p.stride,
        padding: p.padding,
    };
    cross_correlate2d(input, &flipped)
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    /// `None` when the caller did not ask for it.
    pub input: Option<Tensor<T>>,
    pub kernels: Tensor<T>,
    pub bias: Vec<T>,
}

/// Gradients of a cross-correlation given the upstream gradient of its output.
pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    p: &ConvParams<T>,
    upstream: &Tensor<T>,
    need_input_grad: bool,
) -> Result<ConvGrads<T>> {
    let s = input.shape();
    let g = p.check_input(s)?;
    let c_out = p.c_out();
    let expected = Shape4::of(s.n, c_out, g.oh, g.ow);
    if upstream.shape() != expected {
        return Err(Error::Shape(format!(
            "upstream gradient {} does not match conv output {expected}",
            upstream.shape()
        )));
    }
    let (k, np) = (g.rows(), g.cols());
    let mut dk = Tensor::zeros(p.kernels.shape());
    let mut db = vec![T::zero(); c_out];
    let mut dx = need_input_grad.then(|| Tensor::zeros(s));
    let mut cols = vec![T::zero(); k * np];
    let mut dcols = if need_input_grad {
        vec![T::zero(); k * np]
    } else {
        Vec::new()
    };
    for n in 0..s.n {
        let dy = upstream.item(n);
        g.im2col(input.item(n), &mut cols);
        gemm_nt(c_out, k, np, dy, &cols, dk.data_mut());
        for (b, row) in db.iter_mut().zip(dy.chunks_exact(np)) {
            *b += row.iter().copied().sum::<T>();
        }
        if let Some(dx) = dx.as_mut() {
            dcols.fill(T::zero());
            gemm_tn(k, np, c_out, p.kernels.data(), dy, &mut dcols);
            g.col2im(&dcols, dx.item_mut(n));
        }
    }
    Ok(ConvGrads {
        input: dx,
        kernels: dk,
        bias: db,
    })
}

/// Normalized match between a receptive-field window and a kernel of the same
/// single-plane shape: the sum of elementwise products divided by the pixel
/// count. Identical ±1 patterns score 1, opposite patterns −1.
pub fn feature_match_score<T: Real>(window: &Tensor<T>, kernel: &Tensor<T>) -> Result<T> {
    let (ws, ks) = (window.shape(), kernel.shape());
    if ws != ks || ws.n != 1 || ws.c != 1 {
        return Err(Error::Shape(format!(
            "window {ws} and kernel {ks} must be equal single planes"
        )));
    }
    let sum: T = window
        .data()
        .iter()
        .zip(kernel.data())
        .map(|(&a, &b)| a * b)
        .sum();
    Ok(sum / T::lit(ws.plane_len() as f64))
}
