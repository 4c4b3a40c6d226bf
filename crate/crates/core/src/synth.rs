//! Synthetic three-class texture images (blob, stripes, checkerboard) for
//! desk-scale experiments and fixtures.

use std::path::{Path, PathBuf};

use crate::data::image::{save_png, RgbImage};
use crate::data::metadata::{write_metadata, BBox, SampleRecord, Split, CLASS_NAMES};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Texture {
    Blob,
    Stripes,
    Checkerboard,
}

impl Texture {
    pub const ALL: [Texture; 3] = [Texture::Blob, Texture::Stripes, Texture::Checkerboard];

    pub fn label(self) -> usize {
        self as usize
    }
}

/// Standard deviation of the additive Gaussian pixel noise.
pub const NOISE_SIGMA: f64 = 20.0;

/// One grey texture image with random geometry and pixel noise, replicated
/// over the three channels.
pub fn texture_image(texture: Texture, size: u32, rng: &mut SeededRng) -> RgbImage {
    let n = size as f64;
    let field: Box<dyn Fn(f64, f64) -> f64> = match texture {
        Texture::Blob => {
            let r = n * rng.uniform(0.12, 0.25);
            let (cx, cy) = (rng.uniform(r, n - r), rng.uniform(r, n - r));
            Box::new(move |x, y| {
                let d2 = (x - cx).powi(2) + (y - cy).powi(2);
                (-d2 / (2.0 * r * r)).exp()
            })
        }
        Texture::Stripes => {
            let period = n * rng.uniform(0.08, 0.2);
            let theta = rng.uniform(0.0, std::f64::consts::PI);
            let phase = rng.uniform(0.0, period);
            let (c, s) = (theta.cos(), theta.sin());
            Box::new(move |x, y| {
                let t = (x * c + y * s + phase).rem_euclid(period) / period;
                if t < 0.5 {
                    1.0
                } else {
                    0.0
                }
            })
        }
        Texture::Checkerboard => {
            let cell = n * rng.uniform(0.06, 0.16);
            let (ox, oy) = (rng.uniform(0.0, cell), rng.uniform(0.0, cell));
            Box::new(move |x, y| {
                let (i, j) = (((x + ox) / cell).floor() as i64, ((y + oy) / cell).floor() as i64);
                if (i + j).rem_euclid(2) == 0 {
                    1.0
                } else {
                    0.0
                }
            })
        }
    };
    let (lo, hi) = (rng.uniform(20.0, 70.0), rng.uniform(180.0, 235.0));
    let mut gray = Vec::with_capacity((size * size) as usize);
    for y in 0..size {
        for x in 0..size {
            let v = lo + (hi - lo) * field(x as f64 + 0.5, y as f64 + 0.5) + NOISE_SIGMA * rng.normal();
            gray.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    RgbImage::from_gray(size, size, &gray).expect("size matches")
}

/// Image `index` of class `texture` in split `split`, seeded independently
/// of every other image.
pub fn seeded_texture(seed: u64, split: Split, texture: Texture, index: usize, size: u32) -> RgbImage {
    let tag = ((split as u64 * 3 + texture.label() as u64) << 32) | index as u64;
    texture_image(texture, size, &mut SeededRng::new(derive_seed(seed, tag)))
}

/// Writes `<root>/<split>/<ClassName>/<class>_<index>.png` for every
/// `(split, images per class)` entry. Returns (path, label) per split.
pub fn write_texture_tree(
    root: &Path,
    size: u32,
    per_class: &[(Split, usize)],
    seed: u64,
) -> Result<Vec<(Split, Vec<(PathBuf, usize)>)>> {
    let mut out = Vec::new();
    for &(split, count) in per_class {
        let mut items = Vec::new();
        for t in Texture::ALL {
            let dir = root.join(split.name()).join(CLASS_NAMES[t.label()]);
            std::fs::create_dir_all(&dir).map_err(|e| Error::io_path(&dir, e))?;
            for i in 0..count {
                let path = dir.join(format!("{}_{i:04}.png", t.label()));
                save_png(&seeded_texture(seed, split, t, i, size), &path)?;
                items.push((path, t.label()));
            }
        }
        out.push((split, items));
    }
    Ok(out)
}

/// Writes raw images (flat, `raw_<n>.png`) plus `metadata.csv` describing
/// them. Each image gets a bounding box leaving a random margin; records are
/// assigned to splits round-robin within each class.
pub fn write_raw_corpus(dir: &Path, size: u32, per_class: usize, seed: u64) -> Result<Vec<SampleRecord>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io_path(dir, e))?;
    let mut rng = SeededRng::new(derive_seed(seed, u64::MAX));
    let mut records = Vec::new();
    for t in Texture::ALL {
        for i in 0..per_class {
            let split = Split::ALL[i % 3];
            let filename = format!("raw_{}_{i:03}.png", t.label());
            save_png(&seeded_texture(seed, split, t, i, size), &dir.join(&filename))?;
            let m = (size / 8).max(1);
            let (xmin, ymin) = (rng.below(m as u64) as u32, rng.below(m as u64) as u32);
            let (xmax, ymax) = (size - rng.below(m as u64) as u32, size - rng.below(m as u64) as u32);
            records.push(SampleRecord {
                filename,
                label: t.label(),
                bbox: BBox { xmin, ymin, xmax, ymax },
                split,
                country: None,
                sex: None,
                age: None,
            });
        }
    }
    let path = dir.join("metadata.csv");
    let file = std::fs::File::create(&path).map_err(|e| Error::io_path(&path, e))?;
    write_metadata(&records, file)?;
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_and_distinct() {
        let a = seeded_texture(1, Split::Train, Texture::Stripes, 4, 32);
        assert_eq!(a, seeded_texture(1, Split::Train, Texture::Stripes, 4, 32));
        assert_ne!(a, seeded_texture(1, Split::Train, Texture::Stripes, 5, 32));
        assert_ne!(a, seeded_texture(1, Split::Valid, Texture::Stripes, 4, 32));
        assert_eq!((a.width, a.height), (32, 32));
    }

    #[test]
    fn textures_have_contrast() {
        let mut rng = SeededRng::new(2);
        for t in Texture::ALL {
            let g = texture_image(t, 64, &mut rng).to_gray();
            let mean = g.iter().map(|&v| v as f64).sum::<f64>() / g.len() as f64;
            let var = g.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / g.len() as f64;
            assert!(var.sqrt() > NOISE_SIGMA, "{t:?}");
        }
    }

    #[test]
    fn raw_corpus_metadata_parses() {
        let dir = tempfile::tempdir().unwrap();
        let recs = write_raw_corpus(dir.path(), 40, 3, 7).unwrap();
        let parsed = crate::data::parse_metadata(&dir.path().join("metadata.csv")).unwrap();
        assert_eq!(parsed.records, recs);
        assert!(recs.iter().all(|r| r.bbox.fits(40, 40)));
    }
}
