use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::checkpoint::load_checkpoint;
use crate::cli::config::RunConfig;
use crate::cli::train::{check_class_count, evaluate, image_stream, Evaluation};
use crate::data::{
    build_balanced_splits, dataset_stats, encode_gray_png, load_image_tensor, parse_metadata, preprocess_file,
    scan_split, write_rejections, write_stats_csv, BatchStream, Rejection, RgbImage, SampleRecord, Split,
    StatsRow, CLASS_NAMES,
};
use crate::error::{Error, Result};
use crate::interpret::{activation_grid, grad_cam, overlay, write_heatmap_csv};
use crate::layers::{Layer, Mode};
use crate::metrics::{
    classification_report, confusion_matrix, format_report, write_confusion_csv, write_normalized_csv,
    write_report_csv, write_summary_csv, ClassificationReport, ConfusionMatrix,
};
use crate::network::{build_network, Network};
use crate::optim::{lr_range_test, write_range_csv, Optimizer, RangeTestResult, StepObjective};
use crate::rng::{derive_seed, SeededRng};

fn create_file(path: &Path) -> Result<fs::File> {
    fs::File::create(path).map_err(|e| Error::io_path(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io_path(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessSummary {
    /// Images written per (split, class).
    pub counts: BTreeMap<(Split, usize), usize>,
    pub rejected: Vec<Rejection>,
    pub rejection_report: PathBuf,
}

impl PreprocessSummary {
    pub fn written(&self) -> usize {
        self.counts.values().sum()
    }
}

/// Crops and resizes every metadata record into
/// `<out>/<split>/<ClassName>/<filename>`. Rows that fail to parse or whose
/// image cannot be processed go to `<out>/rejections.csv`. With `balance_seed`
/// each split is first down-sampled to its smallest class.
pub fn cmd_preprocess(
    metadata: &Path,
    images_dir: &Path,
    out_dir: &Path,
    size: u32,
    balance_seed: Option<u64>,
) -> Result<PreprocessSummary> {
    if size == 0 {
        return Err(Error::Config("`size` must be ≥ 1".into()));
    }
    fs::read_dir(images_dir).map_err(|e| Error::io_path(images_dir, e))?;
    let parsed = parse_metadata(metadata)?;
    let mut rejected = parsed.rejected.clone();
    let rows: BTreeMap<(Split, &str), usize> = parsed
        .records
        .iter()
        .zip(&parsed.record_rows)
        .map(|(r, &row)| ((r.split, r.filename.as_str()), row))
        .collect();
    let selected: Vec<SampleRecord> = match balance_seed {
        Some(seed) => build_balanced_splits(&parsed.records, seed)?
            .all_records()
            .into_iter()
            .cloned()
            .collect(),
        None => parsed.records.clone(),
    };
    let mut counts = BTreeMap::new();
    for split in Split::ALL {
        for class in CLASS_NAMES {
            create_dir(&out_dir.join(split.name()).join(class))?;
        }
    }
    for rec in &selected {
        let src = images_dir.join(&rec.filename);
        let name = Path::new(&rec.filename)
            .file_name()
            .ok_or_else(|| Error::Data(format!("bad filename `{}`", rec.filename)))?;
        let dst = out_dir.join(rec.split.name()).join(CLASS_NAMES[rec.label]).join(name);
        match preprocess_file(&src, rec.bbox, size, &dst) {
            Ok(()) => *counts.entry((rec.split, rec.label)).or_insert(0) += 1,
            Err(e) => rejected.push(Rejection {
                row: rows[&(rec.split, rec.filename.as_str())],
                reason: e.to_string(),
            }),
        }
    }
    rejected.sort_by_key(|r| r.row);
    let report = out_dir.join("rejections.csv");
    write_rejections(&rejected, create_file(&report)?)?;
    Ok(PreprocessSummary {
        counts,
        rejected,
        rejection_report: report,
    })
}

/// Distribution tables of a metadata file, written as CSV to `out`.
pub fn cmd_stats(metadata: &Path, out: &Path) -> Result<Vec<StatsRow>> {
    let parsed = parse_metadata(metadata)?;
    let rows = dataset_stats(&parsed.records);
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_stats_csv(&rows, create_file(out)?)?;
    Ok(rows)
}

#[derive(Debug, Clone)]
pub struct EvalOutput {
    pub evaluation: Evaluation,
    pub confusion: ConfusionMatrix,
    pub report: ClassificationReport,
    pub files: Vec<PathBuf>,
}

/// Evaluates a checkpoint on `<data_dir>/<split>` and writes `report.txt`,
/// `report.csv`, `summary.csv`, `confusion.csv`, `confusion_normalized.csv`
/// and `predictions.csv` into `out_dir`.
pub fn cmd_eval(checkpoint: &Path, data_dir: &Path, split: Split, out_dir: &Path, batch: usize) -> Result<EvalOutput> {
    if batch == 0 {
        return Err(Error::Config("`batch_size` must be ≥ 1".into()));
    }
    let ck = load_checkpoint(checkpoint)?;
    check_class_count(&ck.network)?;
    let items = scan_split(data_dir, split)?;
    if items.is_empty() {
        return Err(Error::Data(format!("no images under {}/{split}", data_dir.display())));
    }
    let input = ck.network.input_shape(1);
    let stream = image_stream(items, input.h, batch, 2, ck.progress.seed)?;
    let evaluation = evaluate(&ck.network, &stream)?;
    let confusion = confusion_matrix(&evaluation.truth, &evaluation.predicted, CLASS_NAMES.len())?;
    let report = classification_report(&confusion, &evaluation.losses);

    create_dir(out_dir)?;
    let files: Vec<PathBuf> = [
        "report.txt",
        "report.csv",
        "summary.csv",
        "confusion.csv",
        "confusion_normalized.csv",
        "predictions.csv",
    ]
    .iter()
    .map(|f| out_dir.join(f))
    .collect();
    fs::write(&files[0], format_report(&report)).map_err(|e| Error::io_path(&files[0], e))?;
    write_report_csv(&report, create_file(&files[1])?)?;
    write_summary_csv(&report, create_file(&files[2])?)?;
    write_confusion_csv(&confusion, create_file(&files[3])?)?;
    write_normalized_csv(&confusion, create_file(&files[4])?)?;
    write_predictions(&stream, &evaluation, &files[5])?;
    Ok(EvalOutput {
        evaluation,
        confusion,
        report,
        files,
    })
}

/// `path,label,predicted,loss`, one row per image in evaluation order.
fn write_predictions(stream: &BatchStream, ev: &Evaluation, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(create_file(path)?);
    w.write_record(["path", "label", "predicted", "loss"])?;
    for (i, (p, label)) in stream.items().iter().enumerate() {
        w.write_record([
            p.display().to_string(),
            label.to_string(),
            ev.predicted[i].to_string(),
            ev.losses[i].to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io_path(path, e))
}

fn load_for_image(checkpoint: &Path, image: &Path) -> Result<(Network<f32>, crate::tensor::Tensor<f32>)> {
    let ck = load_checkpoint(checkpoint)?;
    let input = ck.network.input_shape(1);
    if input.c != 3 || input.h != input.w {
        return Err(Error::Config(format!("unsupported network input {input}")));
    }
    let tensor = load_image_tensor(image, input.h, 3)?;
    Ok((ck.network, tensor))
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "image".into(), |s| s.to_string_lossy().into_owned())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCamOutput {
    pub class_index: usize,
    pub overlay: PathBuf,
    pub heatmap: PathBuf,
}

/// Grad-CAM for `class` (the predicted class when `None`): writes
/// `<stem>_gradcam.png` (overlay on the network-sized image) and
/// `<stem>_heatmap.csv`.
pub fn cmd_gradcam(
    checkpoint: &Path,
    image: &Path,
    class: Option<usize>,
    alpha: f64,
    out_dir: &Path,
) -> Result<GradCamOutput> {
    let (net, tensor) = load_for_image(checkpoint, image)?;
    let class_index = match class {
        Some(c) if c < CLASS_NAMES.len() => c,
        Some(c) => return Err(Error::Config(format!("`class` = {c}: must be 0, 1 or 2"))),
        None => net.predict(&tensor)?[0],
    };
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("`alpha` = {alpha}: must lie in [0, 1]")));
    }
    let heat = grad_cam(&net, &tensor, class_index)?;
    let s = tensor.shape();
    let plane = s.h * s.w;
    let pixels: Vec<u8> = (0..plane)
        .flat_map(|i| (0..3).map(move |c| (c, i)))
        .map(|(c, i)| (tensor.data()[c * plane + i] * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    let base = RgbImage::new(s.w as u32, s.h as u32, pixels)?;
    let blended = overlay(&base, &heat, alpha)?;
    create_dir(out_dir)?;
    let name = stem(image);
    let overlay_path = out_dir.join(format!("{name}_gradcam.png"));
    let heatmap_path = out_dir.join(format!("{name}_heatmap.csv"));
    crate::data::save_png(&blended, &overlay_path)?;
    write_heatmap_csv(&heat, create_file(&heatmap_path)?)?;
    Ok(GradCamOutput {
        class_index,
        overlay: overlay_path,
        heatmap: heatmap_path,
    })
}

/// Activation grids as grey PNGs `<stem>_layer<i>_<kind>.png`. An empty
/// `layers` selects every convolution and pooling layer.
pub fn cmd_activations(checkpoint: &Path, image: &Path, layers: &[usize], out_dir: &Path) -> Result<Vec<PathBuf>> {
    let (net, tensor) = load_for_image(checkpoint, image)?;
    let chosen: Vec<usize> = if layers.is_empty() {
        net.layers()
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, Layer::Conv(_) | Layer::Pool { .. }))
            .map(|(i, _)| i)
            .collect()
    } else {
        layers.to_vec()
    };
    let grids = chosen
        .iter()
        .map(|&i| activation_grid(&net, &tensor, i))
        .collect::<Result<Vec<_>>>()?;
    create_dir(out_dir)?;
    let name = stem(image);
    let mut paths = Vec::new();
    for g in grids {
        let path = out_dir.join(format!(
            "{name}_layer{:02}_{}.png",
            g.layer_index,
            net.layers()[g.layer_index].kind()
        ));
        let bytes = encode_gray_png(g.width() as u32, g.height() as u32, &g.pixels)?;
        fs::write(&path, bytes).map_err(|e| Error::io_path(&path, e))?;
        paths.push(path);
    }
    Ok(paths)
}

/// One training step per call on a cycling stream of training batches.
struct TrainingObjective<'a> {
    network: Network<f32>,
    optimizer: Optimizer<f32>,
    stream: &'a BatchStream,
    batches: crate::data::EpochBatches,
    epoch: u64,
    rng: SeededRng,
}

impl StepObjective for TrainingObjective<'_> {
    fn step(&mut self, lr: f64) -> Result<f64> {
        let batch = match self.batches.next() {
            Some(b) => b?,
            None => {
                self.epoch += 1;
                self.batches = self.stream.epoch(self.epoch);
                self.batches
                    .next()
                    .ok_or_else(|| Error::Data("empty training set".into()))??
            }
        };
        self.optimizer.set_lr(lr);
        let out = self.network.backward(&batch.images, &batch.labels, &mut self.rng)?;
        if !out.loss.is_finite() {
            return Ok(f64::INFINITY);
        }
        self.optimizer.update(&mut self.network, &out.gradients)?;
        Ok(out.loss as f64)
    }
}

/// Learning-rate range test on a fresh reference network over the training
/// split of `cfg.data_dir`; writes the sweep to `out`.
pub fn cmd_lr_range(cfg: &RunConfig, low: f64, high: f64, steps: usize, out: &Path) -> Result<RangeTestResult> {
    cfg.validate()?;
    if !(low > 0.0 && low < high && high.is_finite()) || steps < 2 {
        return Err(Error::Config(format!(
            "range test needs 0 < low < high and ≥ 2 steps, got {low}..{high} in {steps}"
        )));
    }
    let items = scan_split(&cfg.data_dir, Split::Train)?;
    if items.is_empty() {
        return Err(Error::Data(format!("no training images under {}", cfg.data_dir.display())));
    }
    let stream = image_stream(items, cfg.image_size, cfg.batch_size, cfg.prefetch, cfg.seed)?;
    let mut rng = SeededRng::new(derive_seed(cfg.seed, 0));
    let mut network = build_network(&cfg.network_spec(), &mut rng)?;
    network.set_mode(Mode::Training);
    let mut objective = TrainingObjective {
        network,
        optimizer: Optimizer::new(cfg.optimizer, cfg.adabelief(), low),
        stream: &stream,
        batches: stream.epoch(0),
        epoch: 0,
        rng: SeededRng::new(derive_seed(cfg.seed, 2)),
    };
    let result = lr_range_test(&mut objective, (low, high), steps)?;
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_range_csv(&result, create_file(out)?)?;
    Ok(result)
}
