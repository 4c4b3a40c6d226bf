use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::checkpoint::{load_checkpoint, save_checkpoint, TrainProgress};
use crate::cli::config::RunConfig;
use crate::data::{scan_split, BatchStream, Split, StreamConfig, CLASS_NAMES};
use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::metrics::{cohens_kappa, confusion_matrix};
use crate::network::{argmax_rows, build_network, Network};
use crate::optim::Optimizer;
use crate::rng::{derive_seed, SeededRng};
use crate::tensor::Tensor;

pub const LOG_HEADER: [&str; 9] = [
    "epoch",
    "lr",
    "train_loss",
    "train_acc",
    "train_kappa",
    "val_loss",
    "val_acc",
    "val_kappa",
    "seconds",
];
pub const CONFIG_SNAPSHOT: &str = "config.snapshot";
pub const LOG_FILE: &str = "log.csv";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";

const INIT_TAG: u64 = 0;
const STREAM_TAG: u64 = 1;
const DROPOUT_TAG: u64 = 2;

/// One row of `log.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: u64,
    /// Rate of the epoch's last step.
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub train_kappa: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub val_kappa: f64,
    pub seconds: f64,
}

impl EpochLog {
    fn record(&self) -> [String; 9] {
        [
            self.epoch.to_string(),
            self.lr.to_string(),
            self.train_loss.to_string(),
            self.train_acc.to_string(),
            self.train_kappa.to_string(),
            self.val_loss.to_string(),
            self.val_acc.to_string(),
            self.val_kappa.to_string(),
            format!("{:.3}", self.seconds),
        ]
    }
}

/// Reads a training log back.
pub fn read_log(path: &Path) -> Result<Vec<EpochLog>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let f = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Data(format!("{}: bad value in column {}", path.display(), LOG_HEADER[i])))
        };
        out.push(EpochLog {
            epoch: f(0)? as u64,
            lr: f(1)?,
            train_loss: f(2)?,
            train_acc: f(3)?,
            train_kappa: f(4)?,
            val_loss: f(5)?,
            val_acc: f(6)?,
            val_kappa: f(7)?,
            seconds: f(8)?,
        });
    }
    Ok(out)
}

/// Predictions and per-sample cross-entropy over a labelled set.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub truth: Vec<usize>,
    pub predicted: Vec<usize>,
    pub losses: Vec<f64>,
}

impl Evaluation {
    pub fn mean_loss(&self) -> f64 {
        if self.losses.is_empty() {
            0.0
        } else {
            self.losses.iter().sum::<f64>() / self.losses.len() as f64
        }
    }

    pub fn accuracy(&self) -> f64 {
        let hits = self.truth.iter().zip(&self.predicted).filter(|(t, p)| t == p).count();
        hits as f64 / self.truth.len().max(1) as f64
    }

    pub fn kappa(&self) -> Result<f64> {
        Ok(cohens_kappa(&confusion_matrix(&self.truth, &self.predicted, CLASS_NAMES.len())?))
    }
}

/// `log Σ exp(z) − z_y` per row, in f64.
pub fn per_sample_losses(logits: &Tensor<f32>, labels: &[usize]) -> Vec<f64> {
    let k = logits.shape().c;
    logits
        .data()
        .chunks_exact(k)
        .zip(labels)
        .map(|(row, &y)| {
            let m = row.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v as f64));
            let lse = m + row.iter().map(|&v| (v as f64 - m).exp()).sum::<f64>().ln();
            lse - row[y] as f64
        })
        .collect()
}

/// Inference over the stream in list order.
pub fn evaluate(net: &Network<f32>, stream: &BatchStream) -> Result<Evaluation> {
    let mut out = Evaluation {
        truth: Vec::with_capacity(stream.len()),
        predicted: Vec::with_capacity(stream.len()),
        losses: Vec::with_capacity(stream.len()),
    };
    for batch in stream.sequential() {
        let batch = batch?;
        let logits = net.infer(&batch.images)?;
        out.predicted.extend(argmax_rows(&logits));
        out.losses.extend(per_sample_losses(&logits, &batch.labels));
        out.truth.extend(batch.labels);
    }
    Ok(out)
}

/// Checks that the network ends in one output per class.
pub fn check_class_count(net: &Network<f32>) -> Result<()> {
    let out = net.spec().validate()?.last().copied().unwrap_or((0, 0, 0));
    if out.0 != CLASS_NAMES.len() {
        return Err(Error::Data(format!(
            "network has {} outputs but the data tree has {} classes",
            out.0,
            CLASS_NAMES.len()
        )));
    }
    Ok(())
}

/// RGB stream whose shuffle seed is derived from the run seed.
pub fn image_stream(
    items: Vec<(PathBuf, usize)>,
    image_size: usize,
    batch: usize,
    prefetch: usize,
    seed: u64,
) -> Result<BatchStream> {
    BatchStream::new(
        items,
        StreamConfig {
            batch_size: batch,
            seed: derive_seed(seed, STREAM_TAG),
            prefetch,
            image_size,
            channels: 3,
        },
    )
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub run_dir: PathBuf,
    /// Epochs trained by this call.
    pub rows: Vec<EpochLog>,
    /// Completed epochs, including those before a resume.
    pub epoch: u64,
    pub steps: u64,
    pub best_val_loss: Option<f64>,
}

struct Start {
    network: Network<f32>,
    optimizer: Optimizer<f32>,
    progress: TrainProgress,
}

fn start_state(cfg: &RunConfig) -> Result<Start> {
    match &cfg.resume {
        Some(path) => {
            let ck = load_checkpoint(path)?;
            let input = ck.network.input_shape(1);
            if (input.c, input.h, input.w) != (3, cfg.image_size, cfg.image_size) {
                return Err(Error::Config(format!(
                    "`image_size` = {} but the checkpoint expects {}",
                    cfg.image_size, input
                )));
            }
            if ck.optimizer.kind() != cfg.optimizer {
                return Err(Error::Config(format!(
                    "`optimizer` = {:?} but the checkpoint was trained with {:?}",
                    cfg.optimizer,
                    ck.optimizer.kind()
                )));
            }
            check_class_count(&ck.network)?;
            Ok(Start {
                network: ck.network,
                optimizer: ck.optimizer,
                progress: ck.progress,
            })
        }
        None => {
            let mut rng = SeededRng::new(derive_seed(cfg.seed, INIT_TAG));
            let network = build_network(&cfg.network_spec(), &mut rng)?;
            Ok(Start {
                network,
                optimizer: Optimizer::new(cfg.optimizer, cfg.adabelief(), cfg.lr),
                progress: TrainProgress::new(cfg.seed, cfg.lr),
            })
        }
    }
}

fn open_log(run_dir: &Path, resumed_epoch: Option<u64>) -> Result<()> {
    let path = run_dir.join(LOG_FILE);
    if !path.exists() {
        return Ok(());
    }
    let rows = read_log(&path)?;
    match (resumed_epoch, rows.last()) {
        (_, None) => Ok(()),
        (None, Some(_)) => Err(Error::Config(format!(
            "{} already holds a training log; resume or pick another `run_dir`",
            run_dir.display()
        ))),
        (Some(e), Some(last)) if last.epoch > e => Err(Error::Config(format!(
            "log already reaches epoch {} but the checkpoint is at epoch {e}",
            last.epoch
        ))),
        _ => Ok(()),
    }
}

/// Trains the reference network per `cfg`. All inputs are checked before the
/// run directory is touched. `on_epoch` sees every logged row.
pub fn train(cfg: &RunConfig, on_epoch: &mut dyn FnMut(&EpochLog)) -> Result<TrainSummary> {
    cfg.validate()?;
    let train_items = scan_split(&cfg.data_dir, Split::Train)?;
    let valid_items = scan_split(&cfg.data_dir, Split::Valid)?;
    if train_items.is_empty() || valid_items.is_empty() {
        return Err(Error::Data(format!(
            "{} needs images in both train/ and valid/",
            cfg.data_dir.display()
        )));
    }
    let Start {
        mut network,
        mut optimizer,
        mut progress,
    } = start_state(cfg)?;
    open_log(&cfg.run_dir, cfg.resume.as_ref().map(|_| progress.epoch))?;

    let seed = progress.seed;
    let train_stream = image_stream(train_items, cfg.image_size, cfg.batch_size, cfg.prefetch, seed)?;
    let valid_stream = image_stream(valid_items, cfg.image_size, cfg.batch_size, cfg.prefetch, seed)?;
    let batches = train_stream.batches_per_epoch();
    let policy = cfg.plateau();

    fs::create_dir_all(&cfg.run_dir).map_err(|e| Error::io_path(&cfg.run_dir, e))?;
    let snapshot = RunConfig {
        seed,
        ..cfg.clone()
    };
    let snap_path = cfg.run_dir.join(CONFIG_SNAPSHOT);
    fs::write(&snap_path, snapshot.to_toml()?).map_err(|e| Error::io_path(&snap_path, e))?;
    let log_path = cfg.run_dir.join(LOG_FILE);
    let fresh_log = fs::metadata(&log_path).map(|m| m.len() == 0).unwrap_or(true);
    let log_file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .map_err(|e| Error::io_path(&log_path, e))?;
    let mut log = csv::Writer::from_writer(log_file);
    if fresh_log {
        log.write_record(LOG_HEADER)?;
        log.flush().map_err(|e| Error::io_path(&log_path, e))?;
    }

    let mut rows = Vec::new();
    while progress.epoch < cfg.epochs {
        let epoch = progress.epoch + 1;
        let started = Instant::now();
        network.set_mode(Mode::Training);
        let mut rng = SeededRng::new(derive_seed(derive_seed(seed, DROPOUT_TAG), epoch));
        let (mut loss_sum, mut truth, mut predicted) = (0.0, Vec::new(), Vec::new());
        let mut lr = optimizer.lr();
        for batch in train_stream.epoch(epoch) {
            let batch = batch?;
            lr = cfg.lr_at(optimizer.step_count(), progress.base_lr, batches);
            optimizer.set_lr(lr);
            let out = network.backward(&batch.images, &batch.labels, &mut rng)?;
            if !out.loss.is_finite() {
                return Err(Error::NonFinite(format!("training loss at epoch {epoch}")));
            }
            optimizer.update(&mut network, &out.gradients)?;
            loss_sum += out.loss as f64 * batch.labels.len() as f64;
            predicted.extend(argmax_rows(&out.logits));
            truth.extend(batch.labels);
        }
        network.set_mode(Mode::Inference);
        let val = evaluate(&network, &valid_stream)?;
        let train_eval = Evaluation {
            losses: Vec::new(),
            truth,
            predicted,
        };
        let row = EpochLog {
            epoch,
            lr,
            train_loss: loss_sum / train_eval.truth.len() as f64,
            train_acc: train_eval.accuracy(),
            train_kappa: train_eval.kappa()?,
            val_loss: val.mean_loss(),
            val_acc: val.accuracy(),
            val_kappa: val.kappa()?,
            seconds: started.elapsed().as_secs_f64(),
        };

        progress.epoch = epoch;
        progress.base_lr = progress.plateau.update(&policy, row.val_loss, progress.base_lr);
        if progress.best_val_loss.is_none_or(|b| row.val_loss < b) {
            progress.best_val_loss = Some(row.val_loss);
            save_checkpoint(&network, &optimizer, &progress, &cfg.run_dir.join(BEST_CHECKPOINT))?;
        }
        save_checkpoint(&network, &optimizer, &progress, &cfg.run_dir.join(LAST_CHECKPOINT))?;
        log.write_record(row.record())?;
        log.flush().map_err(|e| Error::io_path(&log_path, e))?;
        on_epoch(&row);
        let done = cfg.target_val_acc.is_some_and(|t| row.val_acc >= t);
        rows.push(row);
        if done {
            break;
        }
    }
    Ok(TrainSummary {
        run_dir: cfg.run_dir.clone(),
        rows,
        epoch: progress.epoch,
        steps: optimizer.step_count(),
        best_val_loss: progress.best_val_loss,
    })
}
