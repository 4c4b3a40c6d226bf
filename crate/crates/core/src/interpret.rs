//! Activation grids and Grad-CAM heatmaps with colour overlays.

use std::io::Write;

use crate::data::image::{sample, RgbImage};
use crate::error::{Error, Result};
use crate::layers::Layer;
use crate::network::Network;
use crate::tensor::{Real, Shape4, Tensor};

/// Grey level of a channel whose activations are all equal.
pub const FLAT_GRAY: u8 = 128;

/// One layer's feature maps for a single image, each channel min-max scaled
/// to 0..=255 and tiled row-major. Unused cells of the last row are black.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivationGrid {
    pub layer_index: usize,
    pub channels: usize,
    pub rows: usize,
    pub cols: usize,
    pub tile_height: usize,
    pub tile_width: usize,
    /// `rows·tile_height` × `cols·tile_width`, row-major.
    pub pixels: Vec<u8>,
}

impl ActivationGrid {
    pub fn width(&self) -> usize {
        self.cols * self.tile_width
    }

    pub fn height(&self) -> usize {
        self.rows * self.tile_height
    }

    /// Pixels of channel `c`'s tile.
    pub fn tile(&self, c: usize) -> Vec<u8> {
        let (r0, c0) = ((c / self.cols) * self.tile_height, (c % self.cols) * self.tile_width);
        let mut out = Vec::with_capacity(self.tile_height * self.tile_width);
        for y in 0..self.tile_height {
            let start = (r0 + y) * self.width() + c0;
            out.extend_from_slice(&self.pixels[start..start + self.tile_width]);
        }
        out
    }
}

/// `cols = ⌈√n⌉`, `rows = ⌈n / cols⌉`.
pub fn grid_geometry(n: usize) -> (usize, usize) {
    if n == 0 {
        return (0, 0);
    }
    let mut cols = (n as f64).sqrt() as usize;
    while cols * cols < n {
        cols += 1;
    }
    (n.div_ceil(cols), cols)
}

/// Min-max scaling to 0..=255, rounded; constant planes become [`FLAT_GRAY`].
pub fn normalize_plane(values: &[f64]) -> Vec<u8> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) || !(hi - lo).is_finite() {
        return vec![FLAT_GRAY; values.len()];
    }
    values
        .iter()
        .map(|&v| {
            let s = (v - lo) / (hi - lo) * 255.0;
            if s.is_nan() {
                FLAT_GRAY
            } else {
                (s + 0.5).floor().clamp(0.0, 255.0) as u8
            }
        })
        .collect()
}

fn check_single<T: Real>(net: &Network<T>, image: &Tensor<T>) -> Result<()> {
    if image.shape() != net.input_shape(1) {
        return Err(Error::Shape(format!(
            "expected one image of shape {}, got {}",
            net.input_shape(1),
            image.shape()
        )));
    }
    Ok(())
}

/// Feature maps of layer `layer_index` for one `(1, C, H, W)` image, run in
/// inference mode. Layers after the first flatten are rejected.
pub fn activation_grid<T: Real>(net: &Network<T>, image: &Tensor<T>, layer_index: usize) -> Result<ActivationGrid> {
    check_single(net, image)?;
    let layers = net.layers();
    if layer_index >= layers.len() {
        return Err(Error::Config(format!("layer {layer_index} outside {} layers", layers.len())));
    }
    if let Some(flat) = layers.iter().position(|l| matches!(l, Layer::Flatten)) {
        if layer_index >= flat {
            return Err(Error::Config(format!(
                "layer {layer_index} ({}) has no spatial output",
                layers[layer_index].kind()
            )));
        }
    }
    let (outputs, _) = net.forward_inference_cached(image)?;
    let out = &outputs[layer_index];
    let s = out.shape();
    let (rows, cols) = grid_geometry(s.c);
    let width = cols * s.w;
    let mut pixels = vec![0u8; rows * s.h * width];
    for c in 0..s.c {
        let plane: Vec<f64> = out.plane(0, c).iter().map(|v| v.f64()).collect();
        let tile = normalize_plane(&plane);
        let (r0, c0) = ((c / cols) * s.h, (c % cols) * s.w);
        for y in 0..s.h {
            let start = (r0 + y) * width + c0;
            pixels[start..start + s.w].copy_from_slice(&tile[y * s.w..(y + 1) * s.w]);
        }
    }
    Ok(ActivationGrid {
        layer_index,
        channels: s.c,
        rows,
        cols,
        tile_height: s.h,
        tile_width: s.w,
        pixels,
    })
}

/// Class-discriminative map in [0, 1] at input resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub width: usize,
    pub height: usize,
    pub class_index: usize,
    /// Row-major.
    pub values: Vec<f64>,
}

impl Heatmap {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        (best % self.width, best / self.width)
    }
}

/// Half-pixel bilinear resampling of a row-major plane.
pub fn upsample_bilinear(plane: &[f64], width: usize, height: usize, out_w: usize, out_h: usize) -> Vec<f64> {
    let xs: Vec<_> = (0..out_w as u32).map(|x| sample(x, width as u32, out_w as u32)).collect();
    let mut out = Vec::with_capacity(out_w * out_h);
    for y in 0..out_h as u32 {
        let (y0, y1, fy) = sample(y, height as u32, out_h as u32);
        for &(x0, x1, fx) in &xs {
            let top = plane[y0 * width + x0] * (1.0 - fx) + plane[y0 * width + x1] * fx;
            let bottom = plane[y1 * width + x0] * (1.0 - fx) + plane[y1 * width + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Index of the last convolution layer.
pub fn last_conv_index<T: Real>(net: &Network<T>) -> Option<usize> {
    net.layers().iter().rposition(|l| matches!(l, Layer::Conv(_)))
}

/// Grad-CAM on the last convolution layer's output `A`: channel weights are
/// the spatial means of ∂logit/∂A, the map is `max(0, Σ_k α_k A^k)`, upsampled
/// to the input size and divided by its maximum.
pub fn grad_cam<T: Real>(net: &Network<T>, image: &Tensor<T>, class_index: usize) -> Result<Heatmap> {
    check_single(net, image)?;
    let tap = last_conv_index(net).ok_or_else(|| Error::Config("network has no convolution layer".into()))?;
    let (outputs, caches) = net.forward_inference_cached(image)?;
    let logits = outputs.last().ok_or_else(|| Error::State("empty network".into()))?;
    let k = logits.shape().c;
    if class_index >= k || logits.len() != k {
        return Err(Error::Config(format!("class {class_index} outside {k} outputs")));
    }
    let mut upstream = Tensor::zeros(logits.shape());
    upstream.data_mut()[class_index] = T::one();
    let (grad, _) = net.backprop(&caches, upstream, Some(tap))?;
    let a = &outputs[tap];
    let s = a.shape();
    let plane = s.h * s.w;
    let mut raw = vec![0f64; plane];
    for c in 0..s.c {
        let alpha = grad.plane(0, c).iter().map(|v| v.f64()).sum::<f64>() / plane as f64;
        for (r, v) in raw.iter_mut().zip(a.plane(0, c)) {
            *r += alpha * v.f64();
        }
    }
    for r in raw.iter_mut() {
        *r = r.max(0.0);
    }
    let input = net.input_shape(1);
    let mut values = upsample_bilinear(&raw, s.w, s.h, input.w, input.h);
    let max = values.iter().copied().fold(0.0, f64::max);
    for v in values.iter_mut() {
        *v = if max > 0.0 { (*v / max).clamp(0.0, 1.0) } else { 0.0 };
    }
    Ok(Heatmap {
        width: input.w,
        height: input.h,
        class_index,
        values,
    })
}

const fn ramp_entry(i: usize) -> [u8; 3] {
    let p = i * 3;
    let seg = if p / 255 > 2 { 2 } else { p / 255 };
    let f = (p - seg * 255) as u8;
    match seg {
        0 => [0, f, 255 - f],
        1 => [f, 255, 0],
        _ => [255, 255 - f, 0],
    }
}

const fn build_ramp() -> [[u8; 3]; 256] {
    let mut t = [[0u8; 3]; 256];
    let mut i = 0;
    while i < 256 {
        t[i] = ramp_entry(i);
        i += 1;
    }
    t
}

/// Blue → green → yellow → red, linear in integer steps: entry `i` has
/// `p = 3i`, segment `s = min(p / 255, 2)` and `f = p − 255·s`; segment 0 is
/// `(0, f, 255−f)`, 1 is `(f, 255, 0)` and 2 is `(255, 255−f, 0)`.
pub const RAMP: [[u8; 3]; 256] = build_ramp();

/// Ramp colour of a heatmap value, `h` rounded to the nearest of 256 levels.
pub fn ramp_color(h: f64) -> [u8; 3] {
    let i = (h.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as usize;
    RAMP[i.min(255)]
}

/// `(1 − α)·image + α·ramp(h)` per channel, rounded to nearest.
pub fn overlay(image: &RgbImage, heatmap: &Heatmap, alpha: f64) -> Result<RgbImage> {
    if (image.width as usize, image.height as usize) != (heatmap.width, heatmap.height) {
        return Err(Error::Shape(format!(
            "heatmap {}×{} for a {}×{} image",
            heatmap.width, heatmap.height, image.width, image.height
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("overlay alpha {alpha} outside [0, 1]")));
    }
    let mut pixels = Vec::with_capacity(image.pixels.len());
    for (px, &h) in image.pixels.chunks_exact(3).zip(&heatmap.values) {
        let color = ramp_color(h);
        for ch in 0..3 {
            let v = (1.0 - alpha) * px[ch] as f64 + alpha * color[ch] as f64;
            pixels.push((v + 0.5).floor().clamp(0.0, 255.0) as u8);
        }
    }
    RgbImage::new(image.width, image.height, pixels)
}

/// One CSV line per heatmap row.
pub fn write_heatmap_csv<W: Write>(heatmap: &Heatmap, mut out: W) -> Result<()> {
    for row in heatmap.values.chunks(heatmap.width.max(1)) {
        let line: Vec<String> = row.iter().map(f64::to_string).collect();
        writeln!(out, "{}", line.join(",")).map_err(|e| Error::io("writing heatmap", e))?;
    }
    Ok(())
}

/// Converts an 8-bit RGB image to a `(1, 3, H, W)` tensor of raw 0..=255
/// values, or 0..=1 when `unit` is set.
pub fn image_tensor<T: Real>(image: &RgbImage, unit: bool) -> Tensor<T> {
    let (w, h) = (image.width as usize, image.height as usize);
    let scale = if unit { 1.0 / 255.0 } else { 1.0 };
    Tensor::from_fn(Shape4::of(1, 3, h, w), |_, c, y, x| {
        T::lit(image.pixels[(y * w + x) * 3 + c] as f64 * scale)
    })
}
