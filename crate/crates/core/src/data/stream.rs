use std::path::{Path, PathBuf};
use std::sync::mpsc::{sync_channel, Receiver};
use std::sync::Arc;
use std::thread::JoinHandle;

use crate::data::image::{load_png, resize_bilinear};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, SeededRng};
use crate::tensor::{Shape4, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamConfig {
    pub batch_size: usize,
    pub seed: u64,
    /// Batches decoded ahead of the consumer; 0 decodes on demand.
    pub prefetch: usize,
    pub image_size: usize,
    /// 3 for RGB, 1 for luma.
    pub channels: usize,
}

impl Default for StreamConfig {
    fn default() -> Self {
        StreamConfig {
            batch_size: 128,
            seed: 42,
            prefetch: 2,
            image_size: 128,
            channels: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// `(B, channels, S, S)` with values in [0, 1].
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    /// Positions of the batch items in the stream's item list.
    pub indices: Vec<usize>,
}

/// Loads a PNG as a `(1, channels, size, size)` tensor scaled to [0, 1],
/// resizing bilinearly when the stored size differs.
pub fn load_image_tensor(path: &Path, size: usize, channels: usize) -> Result<Tensor<f32>> {
    let mut img = load_png(path)?;
    if (img.width as usize, img.height as usize) != (size, size) {
        img = resize_bilinear(&img, size as u32, size as u32).map_err(|e| Error::image(path, e))?;
    }
    let plane = size * size;
    let mut data = vec![0f32; channels * plane];
    match channels {
        3 => {
            for (i, px) in img.pixels.chunks_exact(3).enumerate() {
                for c in 0..3 {
                    data[c * plane + i] = px[c] as f32 / 255.0;
                }
            }
        }
        1 => {
            for (d, g) in data.iter_mut().zip(img.to_gray()) {
                *d = g as f32 / 255.0;
            }
        }
        _ => return Err(Error::Config(format!("{channels} channels; expected 1 or 3"))),
    }
    Tensor::from_vec(Shape4::of(1, channels, size, size), data)
}

/// Mini-batches over a labelled file list in a seeded per-epoch order.
#[derive(Debug, Clone)]
pub struct BatchStream {
    items: Arc<Vec<(PathBuf, usize)>>,
    config: StreamConfig,
}

impl BatchStream {
    pub fn new(items: Vec<(PathBuf, usize)>, config: StreamConfig) -> Result<Self> {
        if config.batch_size == 0 || config.image_size == 0 {
            return Err(Error::Config("batch size and image size must be ≥ 1".into()));
        }
        if !matches!(config.channels, 1 | 3) {
            return Err(Error::Config(format!("{} channels; expected 1 or 3", config.channels)));
        }
        Ok(BatchStream {
            items: Arc::new(items),
            config,
        })
    }

    pub fn config(&self) -> StreamConfig {
        self.config
    }

    pub fn items(&self) -> &[(PathBuf, usize)] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.items.len().div_ceil(self.config.batch_size)
    }

    /// Item order of `epoch`: a permutation seeded by (seed, epoch).
    pub fn epoch_order(&self, epoch: u64) -> Vec<usize> {
        SeededRng::new(derive_seed(self.config.seed, epoch)).permutation(self.items.len())
    }

    /// Items in list order, for evaluation.
    pub fn sequential(&self) -> EpochBatches {
        self.batches((0..self.items.len()).collect())
    }

    pub fn epoch(&self, epoch: u64) -> EpochBatches {
        self.batches(self.epoch_order(epoch))
    }

    fn batches(&self, order: Vec<usize>) -> EpochBatches {
        let chunks: Vec<Vec<usize>> = order.chunks(self.config.batch_size).map(<[usize]>::to_vec).collect();
        if self.config.prefetch == 0 {
            return EpochBatches::Inline {
                items: Arc::clone(&self.items),
                config: self.config,
                chunks: chunks.into_iter(),
                failed: false,
            };
        }
        let (tx, rx) = sync_channel(self.config.prefetch);
        let items = Arc::clone(&self.items);
        let config = self.config;
        let handle = std::thread::spawn(move || {
            for chunk in chunks {
                let batch = load_batch(&items, &config, chunk);
                let failed = batch.is_err();
                if tx.send(batch).is_err() || failed {
                    return;
                }
            }
        });
        EpochBatches::Prefetch {
            rx,
            handle: Some(handle),
            failed: false,
        }
    }
}

fn load_batch(items: &[(PathBuf, usize)], config: &StreamConfig, indices: Vec<usize>) -> Result<Batch> {
    let s = config.image_size;
    let item_len = config.channels * s * s;
    let mut data = Vec::with_capacity(indices.len() * item_len);
    let mut labels = Vec::with_capacity(indices.len());
    for &i in &indices {
        let (path, label) = &items[i];
        data.extend_from_slice(load_image_tensor(path, s, config.channels)?.data());
        labels.push(*label);
    }
    Ok(Batch {
        images: Tensor::from_vec(Shape4::of(indices.len(), config.channels, s, s), data)?,
        labels,
        indices,
    })
}

/// Batches of one pass. After an error the iterator ends.
pub enum EpochBatches {
    Inline {
        items: Arc<Vec<(PathBuf, usize)>>,
        config: StreamConfig,
        chunks: std::vec::IntoIter<Vec<usize>>,
        failed: bool,
    },
    Prefetch {
        rx: Receiver<Result<Batch>>,
        handle: Option<JoinHandle<()>>,
        failed: bool,
    },
}

impl Iterator for EpochBatches {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Result<Batch>> {
        match self {
            EpochBatches::Inline {
                items,
                config,
                chunks,
                failed,
            } => {
                if *failed {
                    return None;
                }
                let batch = load_batch(items, config, chunks.next()?);
                *failed = batch.is_err();
                Some(batch)
            }
            EpochBatches::Prefetch { rx, handle, failed } => {
                if *failed {
                    return None;
                }
                match rx.recv() {
                    Ok(batch) => {
                        *failed = batch.is_err();
                        Some(batch)
                    }
                    Err(_) => {
                        if let Some(h) = handle.take() {
                            if h.join().is_err() {
                                *failed = true;
                                return Some(Err(Error::State("prefetch worker panicked".into())));
                            }
                        }
                        None
                    }
                }
            }
        }
    }
}
