//! 8-bit RGB images: PNG decode/encode, cropping and half-pixel bilinear
//! resizing.

use std::io::Cursor;
use std::path::Path;

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{ImageEncoder, ImageFormat};

use crate::data::metadata::BBox;
use crate::error::{Error, Result};

/// Default on-disk size of preprocessed images.
pub const PREPROCESS_SIZE: u32 = 224;

const PNG_SIGNATURE: [u8; 8] = [0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a];

/// Interleaved RGB, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width as usize * height as usize * 3 {
            return Err(Error::Shape(format!(
                "{} bytes for a {width}×{height} RGB image",
                pixels.len()
            )));
        }
        Ok(RgbImage {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let pixels = rgb.iter().copied().cycle().take(width as usize * height as usize * 3).collect();
        RgbImage {
            width,
            height,
            pixels,
        }
    }

    /// Grey image replicated over the three channels.
    pub fn from_gray(width: u32, height: u32, gray: &[u8]) -> Result<Self> {
        RgbImage::new(width, height, gray.iter().flat_map(|&g| [g, g, g]).collect())
    }

    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn put(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// Rec. 601 luma, rounded.
    pub fn to_gray(&self) -> Vec<u8> {
        self.pixels
            .chunks_exact(3)
            .map(|p| {
                let y = 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64;
                y.round().min(255.0) as u8
            })
            .collect()
    }
}

/// Decodes PNG bytes; other formats are rejected.
pub fn decode_png(bytes: &[u8], path: &Path) -> Result<RgbImage> {
    if !bytes.starts_with(&PNG_SIGNATURE) {
        return Err(Error::image(path, "not a PNG file"));
    }
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| Error::image(path, e))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    RgbImage::new(w, h, img.into_raw())
}

pub fn load_png(path: &Path) -> Result<RgbImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io_path(path, e))?;
    decode_png(&bytes, path)
}

fn encode(width: u32, height: u32, data: &[u8], color: image::ExtendedColorType) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    PngEncoder::new_with_quality(Cursor::new(&mut out), CompressionType::Default, FilterType::Adaptive)
        .write_image(data, width, height, color)
        .map_err(|e| Error::Data(format!("PNG encoding failed: {e}")))?;
    Ok(out)
}

/// Encodes with fixed settings, so equal images give equal bytes.
pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    encode(img.width, img.height, &img.pixels, image::ExtendedColorType::Rgb8)
}

pub fn encode_gray_png(width: u32, height: u32, gray: &[u8]) -> Result<Vec<u8>> {
    encode(width, height, gray, image::ExtendedColorType::L8)
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    std::fs::write(path, encode_png(img)?).map_err(|e| Error::io_path(path, e))
}

pub fn crop(img: &RgbImage, bbox: BBox) -> Result<RgbImage> {
    if !bbox.fits(img.width, img.height) {
        return Err(Error::Data(format!(
            "bbox ({}, {}, {}, {}) outside {}×{} image",
            bbox.xmin, bbox.ymin, bbox.xmax, bbox.ymax, img.width, img.height
        )));
    }
    let mut pixels = Vec::with_capacity(bbox.width() as usize * bbox.height() as usize * 3);
    let row = img.width as usize * 3;
    for y in bbox.ymin..bbox.ymax {
        let start = y as usize * row + bbox.xmin as usize * 3;
        pixels.extend_from_slice(&img.pixels[start..start + bbox.width() as usize * 3]);
    }
    RgbImage::new(bbox.width(), bbox.height(), pixels)
}

/// Source sample for output index `o`: the two neighbours and the weight of
/// the second, with pixel centres at half-integers and edges clamped.
pub(crate) fn sample(o: u32, n_in: u32, n_out: u32) -> (usize, usize, f64) {
    let s = (o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5;
    let s = s.clamp(0.0, (n_in - 1) as f64);
    let i0 = s.floor() as usize;
    let i1 = (i0 + 1).min(n_in as usize - 1);
    (i0, i1, s - i0 as f64)
}

/// Bilinear resize with half-pixel centres; results round to nearest.
pub fn resize_bilinear(img: &RgbImage, width: u32, height: u32) -> Result<RgbImage> {
    if width == 0 || height == 0 || img.width == 0 || img.height == 0 {
        return Err(Error::Shape("cannot resize to or from an empty image".into()));
    }
    if (width, height) == (img.width, img.height) {
        return Ok(img.clone());
    }
    let xs: Vec<_> = (0..width).map(|x| sample(x, img.width, width)).collect();
    let mut out = vec![0u8; width as usize * height as usize * 3];
    let stride = img.width as usize * 3;
    for y in 0..height {
        let (y0, y1, fy) = sample(y, img.height, height);
        let (r0, r1) = (&img.pixels[y0 * stride..], &img.pixels[y1 * stride..]);
        for (x, &(x0, x1, fx)) in xs.iter().enumerate() {
            for ch in 0..3 {
                let p = |r: &[u8], i: usize| r[i * 3 + ch] as f64;
                let top = p(r0, x0) * (1.0 - fx) + p(r0, x1) * fx;
                let bottom = p(r1, x0) * (1.0 - fx) + p(r1, x1) * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                out[(y as usize * width as usize + x) * 3 + ch] = (v + 0.5).floor().clamp(0.0, 255.0) as u8;
            }
        }
    }
    RgbImage::new(width, height, out)
}

/// Crops to `bbox` and resizes to `size`×`size`.
pub fn preprocess_image(img: &RgbImage, bbox: BBox, size: u32) -> Result<RgbImage> {
    resize_bilinear(&crop(img, bbox)?, size, size)
}

/// File-to-file form of [`preprocess_image`].
pub fn preprocess_file(src: &Path, bbox: BBox, size: u32, dst: &Path) -> Result<()> {
    let img = load_png(src)?;
    let out = preprocess_image(&img, bbox, size).map_err(|e| Error::image(src, e))?;
    save_png(&out, dst)
}
