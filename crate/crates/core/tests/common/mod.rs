//! Helpers shared by the integration tests and the acceptance harness.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use dcnn::data::{save_png, RgbImage};
use dcnn::layers::{ActivationKind, BatchNormState, ConvParams, Layer, Mode, PoolMode};
use dcnn::network::{build_network, InputShape, LayerSpec, NetworkSpec};
use dcnn::rng::SeededRng;
use dcnn::tensor::{Shape4, Tensor};

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;

/// Relative error with a 1e-6 floor on the scale, so that two values that
/// are both ≈ 0 compare by absolute difference.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn run_layer(layer: &Layer<f64>, x: &Tensor<f64>, mode: Mode, seed: u64) -> Tensor<f64> {
    layer.clone().forward(x, mode, &mut SeededRng::new(seed)).unwrap().0
}

/// Largest relative error between the analytic gradients of `layer` and
/// central differences of `L = Σ r ⊙ layer(x)` for random `x` and `r`, over
/// the input and every trainable parameter.
pub fn layer_grad_error(layer: &Layer<f64>, shape: Shape4, mode: Mode, seed: u64) -> f64 {
    let mut rng = SeededRng::new(seed);
    let x = Tensor::<f64>::uniform(shape, -1.0, 1.0, &mut rng);
    let mask_seed = seed ^ 0x5eed;
    let mut fwd = layer.clone();
    let (y, cache) = fwd.forward(&x, mode, &mut SeededRng::new(mask_seed)).unwrap();
    let r = Tensor::<f64>::uniform(y.shape(), -1.0, 1.0, &mut rng);
    let (dx, pgrads) = fwd.backward(&cache, &r, true).unwrap();
    let dx = dx.expect("input gradient");
    let objective = |l: &Layer<f64>, x: &Tensor<f64>| dot(&run_layer(l, x, mode, mask_seed), &r);

    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let (mut xp, mut xm) = (x.clone(), x.clone());
        xp.data_mut()[i] += FD_STEP;
        xm.data_mut()[i] -= FD_STEP;
        let numeric = (objective(layer, &xp) - objective(layer, &xm)) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(dx.data()[i], numeric));
    }
    let trainable: Vec<usize> = layer
        .params()
        .iter()
        .enumerate()
        .filter(|(_, p)| p.trainable)
        .map(|(k, _)| k)
        .collect();
    for (g, &k) in pgrads.iter().zip(&trainable) {
        for j in 0..g.len() {
            let nudged = |delta: f64| {
                let mut l = layer.clone();
                l.params_mut()[k].values[j] += delta;
                objective(&l, &x)
            };
            let numeric = (nudged(FD_STEP) - nudged(-FD_STEP)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(g[j], numeric));
        }
    }
    worst
}

fn pick(rng: &mut SeededRng, lo: usize, hi: usize) -> usize {
    lo + rng.below((hi - lo + 1) as u64) as usize
}

fn random_shape(rng: &mut SeededRng, min_hw: usize) -> Shape4 {
    Shape4::new(
        pick(rng, 1, 3),
        pick(rng, 1, 3),
        pick(rng, min_hw, 6),
        pick(rng, min_hw, 6),
    )
    .unwrap()
}

/// A named gradient-check case.
pub struct LayerCase {
    pub name: String,
    pub layer: Layer<f64>,
    pub shape: Shape4,
    pub mode: Mode,
}

/// `per_kind` random shapes for every layer kind, in both modes where the
/// two differ.
pub fn layer_cases(per_kind: usize, seed: u64) -> Vec<LayerCase> {
    let mut rng = SeededRng::new(seed);
    let mut cases = Vec::new();
    let mut push = |name: &str, layer: Layer<f64>, shape: Shape4, mode: Mode| {
        cases.push(LayerCase {
            name: name.to_string(),
            layer,
            shape,
            mode,
        })
    };
    for _ in 0..per_kind {
        let s = random_shape(&mut rng, 1);
        push("rescale", Layer::Rescale { scale: rng.uniform(-2.0, 2.0) }, s, Mode::Training);

        let s = random_shape(&mut rng, 3);
        let k = pick(&mut rng, 1, 3);
        let c_out = pick(&mut rng, 1, 3);
        let kernels = Tensor::uniform(Shape4::new(c_out, s.c, k, k).unwrap(), -1.0, 1.0, &mut rng);
        let bias = (0..c_out).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let stride = pick(&mut rng, 1, 2);
        let padding = pick(&mut rng, 0, 2);
        let conv = ConvParams::new(kernels, bias, stride, padding).unwrap();
        push("conv", Layer::Conv(conv), s, Mode::Training);

        for mode in [Mode::Training, Mode::Inference] {
            let s = Shape4::new(pick(&mut rng, 2, 4), pick(&mut rng, 1, 3), pick(&mut rng, 1, 4), pick(&mut rng, 1, 4))
                .unwrap();
            let mut bn = BatchNormState::<f64>::new(s.c, 0.9, 1e-3);
            for c in 0..s.c {
                bn.gamma[c] = rng.uniform(0.5, 2.0);
                bn.beta[c] = rng.uniform(-1.0, 1.0);
                bn.moving_mean[c] = rng.uniform(-0.5, 0.5);
                bn.moving_var[c] = rng.uniform(0.5, 2.0);
            }
            push("batchnorm", Layer::BatchNorm(bn), s, mode);
        }

        for kind in ActivationKind::ALL {
            push(kind.name(), Layer::Activation(kind), random_shape(&mut rng, 1), Mode::Training);
        }

        for mode in [PoolMode::Max, PoolMode::Avg] {
            let s = random_shape(&mut rng, 2);
            let layer = Layer::Pool {
                mode,
                window: 2,
                stride: pick(&mut rng, 1, 2),
            };
            push(layer.kind(), layer, s, Mode::Training);
        }

        for mode in [Mode::Training, Mode::Inference] {
            push("dropout", Layer::Dropout { rate: 0.4 }, random_shape(&mut rng, 1), mode);
        }

        push("flatten", Layer::Flatten, random_shape(&mut rng, 1), Mode::Training);

        let s = Shape4::new(pick(&mut rng, 1, 3), pick(&mut rng, 1, 8), 1, 1).unwrap();
        let units = pick(&mut rng, 1, 5);
        let weights = Tensor::uniform(Shape4::new(units, s.c, 1, 1).unwrap(), -1.0, 1.0, &mut rng);
        let bias = (0..units).map(|_| rng.uniform(-1.0, 1.0)).collect();
        push("dense", Layer::Dense { weights, bias }, s, Mode::Training);
    }
    cases
}

/// Three [conv → batchnorm → mish → maxpool] blocks, then
/// flatten → dense → dropout → dense(3).
pub fn composite_spec(channels: usize, size: usize, widths: [usize; 3], hidden: usize) -> NetworkSpec {
    let mut layers = Vec::new();
    for w in widths {
        layers.push(LayerSpec::conv3x3(w));
        layers.push(LayerSpec::batchnorm());
        layers.push(LayerSpec::Activation {
            activation: ActivationKind::Mish,
        });
        layers.push(LayerSpec::MaxPool { window: 2, stride: 2 });
    }
    layers.extend([
        LayerSpec::Flatten,
        LayerSpec::Dense { units: hidden },
        LayerSpec::Dropout { rate: 0.25 },
        LayerSpec::Dense { units: 3 },
    ]);
    NetworkSpec {
        input: InputShape {
            channels,
            height: size,
            width: size,
        },
        layers,
    }
}

/// Largest relative error between `Network::backward` gradients and central
/// differences of the training loss, over every trainable parameter.
pub fn network_grad_error(spec: &NetworkSpec, batch: usize, seed: u64) -> f64 {
    let mut rng = SeededRng::new(seed);
    let mut net = build_network::<f64>(spec, &mut rng).unwrap();
    net.set_mode(Mode::Training);
    let x = Tensor::<f64>::uniform(net.input_shape(batch), -1.0, 1.0, &mut rng);
    let labels: Vec<usize> = (0..batch).map(|_| rng.below(3) as usize).collect();
    let mask_seed = seed ^ 0xd20;
    let out = net.clone().backward(&x, &labels, &mut SeededRng::new(mask_seed)).unwrap();
    let mut worst: f64 = 0.0;
    let names: Vec<(String, usize)> = net
        .named_params()
        .into_iter()
        .filter(|p| p.2)
        .map(|(n, v, _)| (n, v.len()))
        .collect();
    for (name, len) in names {
        let analytic = out.gradients.get(&name).expect("gradient entry").to_vec();
        for j in 0..len {
            let loss = |delta: f64| {
                let mut n = net.clone();
                for (pn, values, _) in n.named_params_mut() {
                    if pn == name {
                        values[j] += delta;
                    }
                }
                n.backward(&x, &labels, &mut SeededRng::new(mask_seed)).unwrap().loss
            };
            let numeric = (loss(FD_STEP) - loss(-FD_STEP)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[j], numeric));
        }
    }
    worst
}

/// Quadruple-loop cross-correlation with zero padding.
pub fn brute_cross_correlate(x: &Tensor<f64>, k: &Tensor<f64>, bias: &[f64], stride: usize, pad: usize) -> Tensor<f64> {
    let (xs, ks) = (x.shape(), k.shape());
    let oh = (xs.h + 2 * pad - ks.h) / stride + 1;
    let ow = (xs.w + 2 * pad - ks.w) / stride + 1;
    let mut out = Tensor::zeros(Shape4::new(xs.n, ks.n, oh, ow).unwrap());
    for n in 0..xs.n {
        for o in 0..ks.n {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = bias[o];
                    for c in 0..xs.c {
                        for i in 0..ks.h {
                            for j in 0..ks.w {
                                let r = (y * stride + i) as isize - pad as isize;
                                let q = (xx * stride + j) as isize - pad as isize;
                                if r < 0 || q < 0 || r >= xs.h as isize || q >= xs.w as isize {
                                    continue;
                                }
                                acc += x.at(n, c, r as usize, q as usize) * k.at(o, c, i, j);
                            }
                        }
                    }
                    out.set(n, o, y, xx, acc);
                }
            }
        }
    }
    out
}

/// One random convolution case: input, params.
pub fn random_conv_case(rng: &mut SeededRng) -> (Tensor<f64>, ConvParams<f64>) {
    let n = pick(rng, 1, 2);
    let c_in = pick(rng, 1, 4);
    let c_out = pick(rng, 1, 4);
    let kh = pick(rng, 1, 4);
    let kw = pick(rng, 1, 4);
    let stride = pick(rng, 1, 2);
    let padding = pick(rng, 0, 2);
    let h = pick(rng, kh.max(2), 9);
    let w = pick(rng, kw.max(2), 9);
    let x = Tensor::uniform(Shape4::new(n, c_in, h, w).unwrap(), -1.0, 1.0, rng);
    let k = Tensor::uniform(Shape4::new(c_out, c_in, kh, kw).unwrap(), -1.0, 1.0, rng);
    let bias = (0..c_out).map(|_| rng.uniform(-1.0, 1.0)).collect();
    (x, ConvParams::new(k, bias, stride, padding).unwrap())
}

/// Gray square with a bright rectangle, replicated to RGB.
pub fn fixture_image(size: u32, label: usize, index: usize) -> RgbImage {
    let mut img = RgbImage::filled(size, size, [20 + 30 * label as u8, 40, 60 + index as u8]);
    let q = size / 4;
    for y in q..3 * q {
        for x in q..(2 + label as u32) * q {
            img.put(x, y, [200, 200 - 40 * label as u8, 180]);
        }
    }
    img
}

pub const FIXTURE_SIZE: u32 = 512;
pub const COUNTRIES: [&str; 3] = ["China", "Iran", "Brazil"];

/// Nine raw images (three per class, one of each class per split) with a
/// metadata CSV. `override_row` replaces the bbox of that data row (1-based).
pub fn write_fixture(dir: &Path, override_row: Option<(usize, &str)>) -> PathBuf {
    std::fs::create_dir_all(dir).unwrap();
    let mut csv = String::from("filename,class,split,xmin,ymin,xmax,ymax,country,sex,age\n");
    let splits = ["train", "valid", "test"];
    let mut row = 0;
    for label in 0..3 {
        for (i, split) in splits.iter().enumerate() {
            row += 1;
            let name = format!("ct_{label}_{i}.png");
            save_png(&fixture_image(FIXTURE_SIZE, label, i), &dir.join(&name)).unwrap();
            let bbox = match override_row {
                Some((r, b)) if r == row => b.to_string(),
                _ => format!("{},{},{},{}", 16 * i, 8 * label, 480 + 8 * i, 500 + 4 * label),
            };
            let sex = ["F", "M", ""][(label + i) % 3];
            let age = if i == 2 { String::new() } else { (25 + 20 * label + 7 * i).to_string() };
            csv.push_str(&format!("{name},{label},{split},{bbox},{},{sex},{age}\n", COUNTRIES[i]));
        }
    }
    let path = dir.join("metadata.csv");
    std::fs::write(&path, csv).unwrap();
    path
}

/// Two-channel 16×16 input; the conv copies channel c to map c, then
/// max-pool, flatten, dense. Logit 1 is the mean of the top-left quadrant of
/// pooled map 0, logit 2 that of the bottom-right quadrant of map 1.
pub fn quadrant_net() -> dcnn::network::Network<f64> {
    let spec = NetworkSpec {
        input: InputShape {
            channels: 2,
            height: 16,
            width: 16,
        },
        layers: vec![
            LayerSpec::conv3x3(2),
            LayerSpec::MaxPool { window: 2, stride: 2 },
            LayerSpec::Flatten,
            LayerSpec::Dense { units: 3 },
        ],
    };
    let mut k = vec![0.0; 2 * 2 * 9];
    k[4] = 1.0;
    k[18 + 9 + 4] = 1.0;
    let mut w = vec![0.0; 3 * 128];
    for y in 0..8 {
        for x in 0..8 {
            if y < 4 && x < 4 {
                w[128 + y * 8 + x] = 1.0 / 16.0;
            }
            if y >= 4 && x >= 4 {
                w[2 * 128 + 64 + y * 8 + x] = 1.0 / 16.0;
            }
        }
    }
    let layers = vec![
        Layer::Conv(ConvParams::new(Tensor::from_vec(Shape4::new(2, 2, 3, 3).unwrap(), k).unwrap(), vec![0.0; 2], 1, 1).unwrap()),
        Layer::Pool {
            mode: PoolMode::Max,
            window: 2,
            stride: 2,
        },
        Layer::Flatten,
        Layer::Dense {
            weights: Tensor::from_vec(Shape4::new(3, 128, 1, 1).unwrap(), w).unwrap(),
            bias: vec![0.0; 3],
        },
    ];
    dcnn::network::Network::from_layers(spec, layers).unwrap()
}

/// Low noise plus a bright blob in the top-left of channel 0 and the
/// bottom-right of channel 1.
pub fn quadrant_image(seed: u64) -> Tensor<f64> {
    let mut rng = SeededRng::new(seed);
    let shape = Shape4::new(1, 2, 16, 16).unwrap();
    let noise = Tensor::<f64>::uniform(shape, 0.0, 0.02, &mut rng);
    Tensor::from_fn(shape, |_, c, y, x| {
        let blob = match c {
            0 => (2..6).contains(&y) && (2..7).contains(&x),
            _ => (10..14).contains(&y) && (11..15).contains(&x),
        };
        noise.at(0, c, y, x) + if blob { 1.0 } else { 0.0 }
    })
}

/// Share of heatmap mass in the top-left quadrant.
pub fn top_left_share(h: &dcnn::interpret::Heatmap) -> f64 {
    let total: f64 = h.values.iter().sum();
    let mut m = 0.0;
    for y in 0..h.height / 2 {
        for x in 0..h.width / 2 {
            m += h.get(x, y);
        }
    }
    m / total
}
