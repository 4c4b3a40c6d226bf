//! Checkpoint files.
//!
//! ```text
//! "DCNN"            4 bytes
//! version           u16 LE
//! manifest length   u64 LE
//! manifest          UTF-8 JSON
//! tensor blobs      concatenated, offsets relative to the first blob
//! ```
//!
//! Every parameter (including batch-norm moving statistics) is stored under
//! its network name; AdaBelief moments are stored as `opt.m.<name>` and
//! `opt.s.<name>`.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::network::{build_network, LayerSpec, Network, NetworkSpec};
use crate::optim::{AdaBelief, AdaBeliefConfig, Optimizer, OptimizerKind, PlateauTracker, Sgd};
use crate::rng::SeededRng;
use crate::tensor::{blob_len, read_blob, write_blob, Shape4, Tensor};

pub const MAGIC: &[u8; 4] = b"DCNN";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 8;

/// Training-loop state needed to resume a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainProgress {
    /// Completed epochs.
    pub epoch: u64,
    pub seed: u64,
    /// Learning rate after plateau reductions; upper bound of the cyclical
    /// schedule.
    pub base_lr: f64,
    pub plateau: PlateauTracker,
    pub best_val_loss: Option<f64>,
}

impl TrainProgress {
    pub fn new(seed: u64, base_lr: f64) -> Self {
        TrainProgress {
            epoch: 0,
            seed,
            base_lr,
            plateau: PlateauTracker::new(),
            best_val_loss: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Network<f32>,
    pub optimizer: Optimizer<f32>,
    pub progress: TrainProgress,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizerManifest {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    adabelief: Option<AdaBeliefConfig>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    offset: u64,
    shape: [u64; 4],
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    spec: NetworkSpec,
    progress: TrainProgress,
    optimizer: OptimizerManifest,
    tensors: Vec<TensorEntry>,
}

fn vector(values: &[f32]) -> Tensor<f32> {
    Tensor::from_vec(Shape4::of(values.len(), 1, 1, 1), values.to_vec())
        .expect("length matches shape")
}

/// Serializes a checkpoint to bytes.
pub fn encode_checkpoint(
    net: &Network<f32>,
    optimizer: &Optimizer<f32>,
    progress: &TrainProgress,
) -> Result<Vec<u8>> {
    let mut tensors: Vec<(String, Tensor<f32>)> = Vec::new();
    for (i, layer) in net.layers().iter().enumerate() {
        for p in layer.params() {
            let name = format!("{i}.{}.{}", layer.kind(), p.field);
            let t = match layer {
                crate::layers::Layer::Conv(c) if p.field == "kernel" => c.kernels.clone(),
                crate::layers::Layer::Dense { weights, .. } if p.field == "weight" => weights.clone(),
                _ => vector(p.values),
            };
            tensors.push((name, t));
        }
    }
    let adabelief = match optimizer {
        Optimizer::AdaBelief(a) => {
            if !a.m.is_empty() {
                let names: Vec<String> = net
                    .named_params()
                    .into_iter()
                    .filter(|p| p.2)
                    .map(|p| p.0)
                    .collect();
                if names.len() != a.m.len() {
                    return Err(Error::State("optimizer moments do not match the network".into()));
                }
                for (prefix, moments) in [("opt.m", &a.m), ("opt.s", &a.s)] {
                    for (name, v) in names.iter().zip(moments) {
                        tensors.push((format!("{prefix}.{name}"), vector(v)));
                    }
                }
            }
            Some(a.config)
        }
        Optimizer::Sgd(_) => None,
    };
    let mut offset = 0u64;
    let entries = tensors
        .iter()
        .map(|(name, t)| {
            let s = t.shape();
            let e = TensorEntry {
                name: name.clone(),
                offset,
                shape: [s.n as u64, s.c as u64, s.h as u64, s.w as u64],
            };
            offset += blob_len(s) as u64;
            e
        })
        .collect();
    let manifest = Manifest {
        spec: net.spec().clone(),
        progress: progress.clone(),
        optimizer: OptimizerManifest {
            kind: optimizer.kind(),
            lr: optimizer.lr(),
            step: optimizer.step_count(),
            adabelief,
        },
        tensors: entries,
    };
    let json = serde_json::to_vec_pretty(&manifest)?;
    let mut out = Vec::with_capacity(HEADER_LEN + json.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in &tensors {
        write_blob(t, &mut out).map_err(|e| Error::io("encoding tensor", e))?;
    }
    Ok(out)
}

/// Layer kinds are checked against the known set before the spec is
/// deserialized, so an unfamiliar kind gets its own error.
fn check_layer_kinds(manifest: &serde_json::Value) -> Result<()> {
    let layers = manifest
        .pointer("/spec/layers")
        .and_then(|v| v.as_array())
        .ok_or_else(|| Error::Format("manifest has no layer list".into()))?;
    for layer in layers {
        let kind = layer
            .get("kind")
            .and_then(|k| k.as_str())
            .ok_or_else(|| Error::Format("layer entry without a kind".into()))?;
        if !LayerSpec::KINDS.contains(&kind) {
            return Err(Error::UnknownLayer(kind.to_string()));
        }
    }
    Ok(())
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 4 {
        return Err(Error::Truncated("file shorter than the magic bytes".into()));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format("bad magic bytes; not a checkpoint".into()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated("header".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::Version {
            found: version,
            expected: VERSION,
        });
    }
    let manifest_len = u64::from_le_bytes(bytes[6..14].try_into().unwrap());
    let manifest_end = usize::try_from(manifest_len)
        .ok()
        .and_then(|l| HEADER_LEN.checked_add(l))
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| Error::Truncated("manifest".into()))?;
    let raw: serde_json::Value = serde_json::from_slice(&bytes[HEADER_LEN..manifest_end])
        .map_err(|e| Error::Format(format!("manifest is not valid JSON: {e}")))?;
    check_layer_kinds(&raw)?;
    let manifest: Manifest =
        serde_json::from_value(raw).map_err(|e| Error::Format(format!("manifest: {e}")))?;
    let blobs = &bytes[manifest_end..];

    let mut tensors: HashMap<&str, Tensor<f32>> = HashMap::new();
    for entry in &manifest.tensors {
        let start = usize::try_from(entry.offset)
            .ok()
            .filter(|&s| s <= blobs.len())
            .ok_or_else(|| Error::Truncated(format!("tensor `{}`", entry.name)))?;
        let mut cursor = &blobs[start..];
        let t: Tensor<f32> = read_blob(&mut cursor)?;
        let s = t.shape();
        if [s.n as u64, s.c as u64, s.h as u64, s.w as u64] != entry.shape {
            return Err(Error::Format(format!(
                "tensor `{}` header disagrees with the manifest",
                entry.name
            )));
        }
        if tensors.insert(&entry.name, t).is_some() {
            return Err(Error::Format(format!("tensor `{}` listed twice", entry.name)));
        }
    }

    let mut network: Network<f32> = build_network(&manifest.spec, &mut SeededRng::new(0))
        .map_err(|e| Error::Format(format!("stored spec is invalid: {e}")))?;
    let mut used = 0;
    for (name, values, _) in network.named_params_mut() {
        let t = tensors
            .get(name.as_str())
            .ok_or_else(|| Error::Format(format!("missing tensor `{name}`")))?;
        if t.len() != values.len() {
            return Err(Error::Format(format!(
                "tensor `{name}` has {} values, layer expects {}",
                t.len(),
                values.len()
            )));
        }
        values.copy_from_slice(t.data());
        used += 1;
    }

    let om = &manifest.optimizer;
    let optimizer = match om.kind {
        OptimizerKind::Sgd => Optimizer::Sgd(Sgd {
            lr: om.lr,
            step: om.step,
        }),
        OptimizerKind::AdaBelief => {
            let config = om
                .adabelief
                .ok_or_else(|| Error::Format("AdaBelief hyperparameters missing".into()))?;
            let mut a = AdaBelief::new(config, om.lr);
            a.step = om.step;
            let names: Vec<String> = network
                .named_params()
                .into_iter()
                .filter(|p| p.2)
                .map(|p| p.0)
                .collect();
            let has_moments = tensors.contains_key(format!("opt.m.{}", names[0]).as_str());
            if has_moments {
                for name in &names {
                    for (prefix, dst) in [("opt.m", &mut a.m), ("opt.s", &mut a.s)] {
                        let key = format!("{prefix}.{name}");
                        let t = tensors
                            .get(key.as_str())
                            .ok_or_else(|| Error::Format(format!("missing tensor `{key}`")))?;
                        dst.push(t.data().to_vec());
                        used += 1;
                    }
                }
            }
            Optimizer::AdaBelief(a)
        }
    };
    if used != tensors.len() {
        return Err(Error::Format(format!(
            "{} stored tensors do not belong to the network",
            tensors.len() - used
        )));
    }
    network.set_mode(Mode::Inference);
    Ok(Checkpoint {
        network,
        optimizer,
        progress: manifest.progress,
    })
}

/// Writes the checkpoint next to `path` and renames it into place.
pub fn save_checkpoint(
    net: &Network<f32>,
    optimizer: &Optimizer<f32>,
    progress: &TrainProgress,
    path: &Path,
) -> Result<()> {
    let bytes = encode_checkpoint(net, optimizer, progress)?;
    let tmp = path.with_extension("ckpt.tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io_path(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io_path(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io_path(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io_path(path, e))
}

/// Loads a checkpoint; the network comes back in inference mode.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io_path(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{InputShape, NUM_CLASSES};
    use crate::tensor::Tensor;

    fn small_spec() -> NetworkSpec {
        NetworkSpec {
            input: InputShape {
                channels: 1,
                height: 4,
                width: 4,
            },
            layers: vec![
                LayerSpec::conv3x3(2),
                LayerSpec::batchnorm(),
                LayerSpec::MaxPool { window: 2, stride: 2 },
                LayerSpec::Flatten,
                LayerSpec::Dense { units: NUM_CLASSES },
            ],
        }
    }

    fn trained() -> (Network<f32>, Optimizer<f32>) {
        let mut rng = SeededRng::new(5);
        let mut net: Network<f32> = build_network(&small_spec(), &mut rng).unwrap();
        let mut opt = Optimizer::new(OptimizerKind::AdaBelief, AdaBeliefConfig::default(), 1e-2);
        let x = Tensor::uniform(net.input_shape(4), -1.0, 1.0, &mut rng);
        for _ in 0..3 {
            let out = net.backward(&x, &[0, 1, 2, 1], &mut rng).unwrap();
            opt.update(&mut net, &out.gradients).unwrap();
        }
        (net, opt)
    }

    #[test]
    fn round_trip_is_byte_identical_and_restores_state() {
        let (net, opt) = trained();
        let progress = TrainProgress::new(7, 1e-2);
        let a = encode_checkpoint(&net, &opt, &progress).unwrap();
        let ck = decode_checkpoint(&a).unwrap();
        let b = encode_checkpoint(&ck.network, &ck.optimizer, &ck.progress).unwrap();
        assert_eq!(a, b);
        assert_eq!(ck.optimizer, opt);
        assert_eq!(ck.progress, progress);
        assert_eq!(ck.optimizer.step_count(), 3);
        let x = Tensor::uniform(net.input_shape(2), -1.0, 1.0, &mut SeededRng::new(1));
        let before = net.infer(&x).unwrap();
        let after = ck.network.infer(&x).unwrap();
        assert_eq!(before.data(), after.data());
    }

    #[test]
    fn distinct_errors() {
        let (net, opt) = trained();
        let good = encode_checkpoint(&net, &opt, &TrainProgress::new(1, 1e-3)).unwrap();

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint(&bad), Err(Error::Format(_))));

        let mut bad = good.clone();
        bad[4] = 9;
        assert!(matches!(decode_checkpoint(&bad), Err(Error::Version { found: 9, .. })));

        assert!(matches!(
            decode_checkpoint(&good[..good.len() - 3]),
            Err(Error::Truncated(_))
        ));
        assert!(matches!(decode_checkpoint(&good[..20]), Err(Error::Truncated(_))));

        let text = String::from_utf8_lossy(&good).into_owned();
        let manifest_len = u64::from_le_bytes(good[6..14].try_into().unwrap()) as usize;
        let json = &text[HEADER_LEN..HEADER_LEN + manifest_len];
        let swapped = json.replacen("\"maxpool\"", "\"avgpoo\"", 1);
        let mut bad = good[..6].to_vec();
        bad.extend_from_slice(&(swapped.len() as u64).to_le_bytes());
        bad.extend_from_slice(swapped.as_bytes());
        bad.extend_from_slice(&good[HEADER_LEN + manifest_len..]);
        assert!(matches!(decode_checkpoint(&bad), Err(Error::UnknownLayer(k)) if k == "avgpoo"));
    }

    #[test]
    fn fresh_optimizer_without_moments() {
        let net: Network<f32> = build_network(&small_spec(), &mut SeededRng::new(2)).unwrap();
        let opt = Optimizer::new(OptimizerKind::AdaBelief, AdaBeliefConfig::default(), 1e-3);
        let bytes = encode_checkpoint(&net, &opt, &TrainProgress::new(2, 1e-3)).unwrap();
        let ck = decode_checkpoint(&bytes).unwrap();
        assert_eq!(ck.optimizer, opt);
        let sgd = Optimizer::new(OptimizerKind::Sgd, AdaBeliefConfig::default(), 0.1);
        let bytes = encode_checkpoint(&net, &sgd, &TrainProgress::new(2, 0.1)).unwrap();
        assert_eq!(decode_checkpoint(&bytes).unwrap().optimizer, sgd);
    }
}
