//! Sequential networks: specification, validation, parameter bookkeeping,
//! forward and backward passes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{
    softmax, softmax_cross_entropy, softmax_cross_entropy_backward, ActivationKind, BatchNormState,
    ConvParams, Layer, LayerCache, Mode, PoolMode,
};
use crate::rng::SeededRng;
use crate::tensor::{Real, Shape4, Tensor};

/// Output classes: 0 Normal, 1 Pneumonia, 2 COVID-19.
pub const NUM_CLASSES: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum LayerSpec {
    Rescale { scale: f64 },
    Conv { filters: usize, kernel: usize, stride: usize, padding: usize },
    BatchNorm { momentum: f64, epsilon: f64 },
    Activation { activation: ActivationKind },
    MaxPool { window: usize, stride: usize },
    Dropout { rate: f64 },
    Flatten,
    Dense { units: usize },
}

impl LayerSpec {
    pub const KINDS: [&'static str; 8] = [
        "rescale",
        "conv",
        "batchnorm",
        "activation",
        "maxpool",
        "dropout",
        "flatten",
        "dense",
    ];

    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Rescale { .. } => "rescale",
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::BatchNorm { .. } => "batchnorm",
            LayerSpec::Activation { .. } => "activation",
            LayerSpec::MaxPool { .. } => "maxpool",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Dense { .. } => "dense",
        }
    }

    pub fn conv3x3(filters: usize) -> Self {
        LayerSpec::Conv {
            filters,
            kernel: 3,
            stride: 1,
            padding: 1,
        }
    }

    pub fn batchnorm() -> Self {
        LayerSpec::BatchNorm {
            momentum: BatchNormState::<f32>::DEFAULT_MOMENTUM,
            epsilon: BatchNormState::<f32>::DEFAULT_EPSILON,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

/// Knobs of the reference architecture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceOptions {
    pub image_size: usize,
    /// Factor of the leading rescale layer: 1/255 for raw 8-bit pixels, 1
    /// for inputs already in [0, 1].
    pub input_scale: f64,
    pub activation: ActivationKind,
    pub dropout: f64,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
}

impl Default for ReferenceOptions {
    fn default() -> Self {
        ReferenceOptions {
            image_size: 128,
            input_scale: 1.0 / 255.0,
            activation: ActivationKind::Mish,
            dropout: 0.3,
            bn_momentum: BatchNormState::<f32>::DEFAULT_MOMENTUM,
            bn_epsilon: BatchNormState::<f32>::DEFAULT_EPSILON,
        }
    }
}

/// Channel widths of the six convolutional blocks of the reference model.
pub const REFERENCE_WIDTHS: [usize; 6] = [8, 16, 32, 48, 64, 96];
/// Units of the hidden dense layer of the reference model.
pub const REFERENCE_HIDDEN_UNITS: usize = 112;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input: InputShape,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// The reference classifier:
    ///
    /// ```text
    /// rescale(input_scale)
    /// 6 × [conv 3×3 s1 p1 → batchnorm → act → maxpool 2]   widths 8,16,32,48,64,96
    /// flatten → dense(112) → batchnorm → act → dropout → dense(3)
    /// ```
    ///
    /// On 128×128 RGB input the batch-norm layers carry 376 features, i.e.
    /// 752 non-trainable moving statistics. Parameter totals: 147,971
    /// (147,219 trainable + 752 non-trainable).
    pub fn reference(opts: ReferenceOptions) -> Self {
        let bn = LayerSpec::BatchNorm {
            momentum: opts.bn_momentum,
            epsilon: opts.bn_epsilon,
        };
        let act = LayerSpec::Activation {
            activation: opts.activation,
        };
        let mut layers = vec![LayerSpec::Rescale { scale: opts.input_scale }];
        for &w in &REFERENCE_WIDTHS {
            layers.extend([
                LayerSpec::conv3x3(w),
                bn.clone(),
                act.clone(),
                LayerSpec::MaxPool { window: 2, stride: 2 },
            ]);
        }
        layers.extend([
            LayerSpec::Flatten,
            LayerSpec::Dense {
                units: REFERENCE_HIDDEN_UNITS,
            },
            bn,
            act,
            LayerSpec::Dropout { rate: opts.dropout },
            LayerSpec::Dense { units: NUM_CLASSES },
        ]);
        NetworkSpec {
            input: InputShape {
                channels: 3,
                height: opts.image_size,
                width: opts.image_size,
            },
            layers,
        }
    }

    /// Checks every layer against the shape flowing into it and returns the
    /// output shape `(c, h, w)` of each layer.
    pub fn validate(&self) -> Result<Vec<(usize, usize, usize)>> {
        let InputShape {
            channels,
            height,
            width,
        } = self.input;
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Spec {
                index: 0,
                reason: format!("input shape {channels}×{height}×{width} has a zero extent"),
            });
        }
        let mut shapes = Vec::with_capacity(self.layers.len());
        let (mut c, mut h, mut w) = (channels, height, width);
        let mut flattened = false;
        for (index, layer) in self.layers.iter().enumerate() {
            let prev = if index == 0 {
                "the input".to_string()
            } else {
                format!("layer {} ({})", index - 1, self.layers[index - 1].kind())
            };
            let bad = |reason: String| Error::Spec {
                index,
                reason: format!("{} after {prev} with output {c}×{h}×{w}: {reason}", layer.kind()),
            };
            match *layer {
                LayerSpec::Rescale { scale } => {
                    if index != 0 {
                        return Err(bad("rescale may only be the first layer".into()));
                    }
                    if !scale.is_finite() {
                        return Err(bad(format!("scale {scale} is not finite")));
                    }
                }
                LayerSpec::Conv {
                    filters,
                    kernel,
                    stride,
                    padding,
                } => {
                    if flattened {
                        return Err(bad("convolution needs a spatial input".into()));
                    }
                    if filters == 0 || kernel == 0 || stride == 0 {
                        return Err(bad("filters, kernel and stride must be ≥ 1".into()));
                    }
                    if kernel > h + 2 * padding || kernel > w + 2 * padding {
                        return Err(bad(format!("kernel {kernel} exceeds padded input")));
                    }
                    h = (h + 2 * padding - kernel) / stride + 1;
                    w = (w + 2 * padding - kernel) / stride + 1;
                    c = filters;
                }
                LayerSpec::BatchNorm { momentum, epsilon } => {
                    if !(momentum > 0.0 && momentum < 1.0) {
                        return Err(bad(format!("momentum {momentum} outside (0, 1)")));
                    }
                    if !(epsilon > 0.0) {
                        return Err(bad(format!("epsilon {epsilon} must be positive")));
                    }
                }
                LayerSpec::Activation { .. } => {}
                LayerSpec::MaxPool { window, stride } => {
                    if flattened {
                        return Err(bad("pooling needs a spatial input".into()));
                    }
                    if window == 0 || stride == 0 {
                        return Err(bad("window and stride must be ≥ 1".into()));
                    }
                    if window > h || window > w {
                        return Err(bad(format!("window {window} exceeds input")));
                    }
                    h = (h - window) / stride + 1;
                    w = (w - window) / stride + 1;
                }
                LayerSpec::Dropout { rate } => {
                    if !(0.0..1.0).contains(&rate) {
                        return Err(bad(format!("rate {rate} outside [0, 1)")));
                    }
                }
                LayerSpec::Flatten => {
                    c *= h * w;
                    h = 1;
                    w = 1;
                    flattened = true;
                }
                LayerSpec::Dense { units } => {
                    if h != 1 || w != 1 {
                        return Err(bad("dense needs a flattened input".into()));
                    }
                    if units == 0 {
                        return Err(bad("units must be ≥ 1".into()));
                    }
                    c = units;
                    flattened = true;
                }
            }
            shapes.push((c, h, w));
        }
        match self.layers.last() {
            Some(LayerSpec::Dense { units }) if *units == NUM_CLASSES => Ok(shapes),
            _ => Err(Error::Spec {
                index: self.layers.len().saturating_sub(1),
                reason: format!("the final layer must be dense with {NUM_CLASSES} units"),
            }),
        }
    }

    /// Σ batch-norm features; the non-trainable parameter count is twice this.
    pub fn batchnorm_features(&self) -> Result<usize> {
        let shapes = self.validate()?;
        Ok(self
            .layers
            .iter()
            .zip(&shapes)
            .filter(|(l, _)| matches!(l, LayerSpec::BatchNorm { .. }))
            .map(|(_, s)| s.0)
            .sum())
    }

    /// True when a batch norm directly follows every convolution and the first
    /// dense layer.
    pub fn follows_batchnorm_placement(&self) -> bool {
        let next_is_bn = |i: usize| matches!(self.layers.get(i + 1), Some(LayerSpec::BatchNorm { .. }));
        let convs_ok = self
            .layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, LayerSpec::Conv { .. }))
            .all(|(i, _)| next_is_bn(i));
        let first_dense = self
            .layers
            .iter()
            .position(|l| matches!(l, LayerSpec::Dense { .. }));
        convs_ok && first_dense.is_some_and(next_is_bn)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCount {
    pub total: usize,
    pub trainable: usize,
    pub non_trainable: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad<T> {
    pub name: String,
    pub values: Vec<T>,
}

/// Gradients of every trainable parameter, in network parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub entries: Vec<ParamGrad<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, name: &str) -> Option<&[T]> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .map(|e| e.values.as_slice())
    }

    pub fn norm(&self) -> f64 {
        self.entries
            .iter()
            .flat_map(|e| e.values.iter())
            .map(|v| v.f64() * v.f64())
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput<T> {
    pub logits: Tensor<T>,
    /// `(layer index, output)` for each requested layer, in layer order.
    pub captured: Vec<(usize, Tensor<T>)>,
}

#[derive(Debug, Clone)]
pub struct BackwardOutput<T> {
    pub loss: T,
    pub logits: Tensor<T>,
    pub gradients: Gradients<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T = f32> {
    spec: NetworkSpec,
    layers: Vec<Layer<T>>,
    mode: Mode,
}

/// Instantiates a validated spec. Conv and dense weights are He-uniform
/// (`U(−√(6/fan_in), √(6/fan_in))`), drawn layer by layer in order; biases
/// and beta are zero, gamma and moving variance one, moving mean zero.
pub fn build_network<T: Real>(spec: &NetworkSpec, rng: &mut SeededRng) -> Result<Network<T>> {
    let shapes = spec.validate()?;
    let mut layers = Vec::with_capacity(spec.layers.len());
    let mut prev = (spec.input.channels, spec.input.height, spec.input.width);
    for (ls, &out) in spec.layers.iter().zip(&shapes) {
        let layer = match *ls {
            LayerSpec::Rescale { scale } => Layer::Rescale { scale: T::lit(scale) },
            LayerSpec::Conv {
                filters,
                kernel,
                stride,
                padding,
            } => {
                let fan_in = prev.0 * kernel * kernel;
                let limit = (6.0 / fan_in as f64).sqrt();
                let k = Tensor::uniform(Shape4::of(filters, prev.0, kernel, kernel), -limit, limit, rng);
                Layer::Conv(ConvParams::new(k, vec![T::zero(); filters], stride, padding)?)
            }
            LayerSpec::BatchNorm { momentum, epsilon } => {
                Layer::BatchNorm(BatchNormState::new(prev.0, momentum, epsilon))
            }
            LayerSpec::Activation { activation } => Layer::Activation(activation),
            LayerSpec::MaxPool { window, stride } => Layer::Pool {
                mode: PoolMode::Max,
                window,
                stride,
            },
            LayerSpec::Dropout { rate } => Layer::Dropout { rate },
            LayerSpec::Flatten => Layer::Flatten,
            LayerSpec::Dense { units } => {
                let limit = (6.0 / prev.0 as f64).sqrt();
                Layer::Dense {
                    weights: Tensor::uniform(Shape4::of(units, prev.0, 1, 1), -limit, limit, rng),
                    bias: vec![T::zero(); units],
                }
            }
        };
        layers.push(layer);
        prev = out;
    }
    Ok(Network {
        spec: spec.clone(),
        layers,
        mode: Mode::Training,
    })
}

impl<T: Real> Network<T> {
    /// Assembles a network from explicit layers (hand-built test and demo
    /// networks). The layers must agree with `spec` in kind and shape.
    pub fn from_layers(spec: NetworkSpec, layers: Vec<Layer<T>>) -> Result<Self> {
        let mut rng = SeededRng::new(0);
        let template: Network<T> = build_network(&spec, &mut rng)?;
        if template.layers.len() != layers.len() {
            return Err(Error::Spec {
                index: layers.len().min(template.layers.len()),
                reason: format!(
                    "{} layers given for a spec of {}",
                    layers.len(),
                    template.layers.len()
                ),
            });
        }
        for (index, (t, l)) in template.layers.iter().zip(&layers).enumerate() {
            let shapes_match = t.kind() == l.kind()
                && t.params().len() == l.params().len()
                && t.params()
                    .iter()
                    .zip(l.params())
                    .all(|(a, b)| a.values.len() == b.values.len());
            if !shapes_match {
                return Err(Error::Spec {
                    index,
                    reason: format!("layer does not match spec kind `{}`", t.kind()),
                });
            }
        }
        Ok(Network {
            spec,
            layers,
            mode: Mode::Training,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn input_shape(&self, batch: usize) -> Shape4 {
        let i = self.spec.input;
        Shape4::of(batch, i.channels, i.height, i.width)
    }

    pub fn param_count(&self) -> ParamCount {
        let (mut trainable, mut frozen) = (0, 0);
        for layer in &self.layers {
            for p in layer.params() {
                if p.trainable {
                    trainable += p.values.len();
                } else {
                    frozen += p.values.len();
                }
            }
        }
        ParamCount {
            total: trainable + frozen,
            trainable,
            non_trainable: frozen,
        }
    }

    /// Every parameter as `(name, values, trainable)`; names are
    /// `"{layer index}.{kind}.{field}"`.
    pub fn named_params(&self) -> Vec<(String, &[T], bool)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            for p in layer.params() {
                out.push((format!("{i}.{}.{}", layer.kind(), p.field), p.values, p.trainable));
            }
        }
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut [T], bool)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let kind = layer.kind();
            for p in layer.params_mut() {
                out.push((format!("{i}.{kind}.{}", p.field), p.values, p.trainable));
            }
        }
        out
    }

    pub fn trainable_params_mut(&mut self) -> Vec<(String, &mut [T])> {
        self.named_params_mut()
            .into_iter()
            .filter(|p| p.2)
            .map(|(n, v, _)| (n, v))
            .collect()
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Rescale { scale } => Layer::Rescale {
                    scale: U::lit(scale.f64()),
                },
                Layer::Conv(p) => Layer::Conv(ConvParams {
                    kernels: p.kernels.cast(),
                    bias: p.bias.iter().map(|v| U::lit(v.f64())).collect(),
                    stride: p.stride,
                    padding: p.padding,
                }),
                Layer::BatchNorm(b) => {
                    let c = |v: &Vec<T>| v.iter().map(|x| U::lit(x.f64())).collect();
                    Layer::BatchNorm(BatchNormState {
                        gamma: c(&b.gamma),
                        beta: c(&b.beta),
                        moving_mean: c(&b.moving_mean),
                        moving_var: c(&b.moving_var),
                        momentum: U::lit(b.momentum.f64()),
                        epsilon: U::lit(b.epsilon.f64()),
                    })
                }
                Layer::Activation(k) => Layer::Activation(*k),
                Layer::Pool { mode, window, stride } => Layer::Pool {
                    mode: *mode,
                    window: *window,
                    stride: *stride,
                },
                Layer::Dropout { rate } => Layer::Dropout { rate: *rate },
                Layer::Flatten => Layer::Flatten,
                Layer::Dense { weights, bias } => Layer::Dense {
                    weights: weights.cast(),
                    bias: bias.iter().map(|v| U::lit(v.f64())).collect(),
                },
            })
            .collect();
        Network {
            spec: self.spec.clone(),
            layers,
            mode: self.mode,
        }
    }

    fn check_batch(&self, batch: &Tensor<T>) -> Result<()> {
        let s = batch.shape();
        let expected = self.input_shape(s.n);
        if s != expected {
            return Err(Error::Shape(format!(
                "batch {s} does not match network input {expected}"
            )));
        }
        Ok(())
    }

    /// Runs all layers in the network's mode. Captured tensors are the outputs
    /// of the layers whose indices appear in `capture`.
    pub fn forward(
        &mut self,
        batch: &Tensor<T>,
        capture: &[usize],
        rng: &mut SeededRng,
    ) -> Result<ForwardOutput<T>> {
        self.check_batch(batch)?;
        if let Some(&bad) = capture.iter().find(|&&i| i >= self.layers.len()) {
            return Err(Error::Config(format!(
                "capture index {bad} outside {} layers",
                self.layers.len()
            )));
        }
        let mode = self.mode;
        let mut x = batch.clone();
        let mut captured = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            x = layer.forward(&x, mode, rng)?.0;
            if capture.contains(&i) {
                captured.push((i, x.clone()));
            }
        }
        Ok(ForwardOutput { logits: x, captured })
    }

    /// Inference-mode logits without touching network state.
    pub fn infer(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_batch(batch)?;
        let mut x = batch.clone();
        for layer in &self.layers {
            x = layer.forward_inference(&x)?.0;
        }
        Ok(x)
    }

    pub fn predict(&self, batch: &Tensor<T>) -> Result<Vec<usize>> {
        Ok(argmax_rows(&softmax(&self.infer(batch)?)))
    }

    /// Inference forward pass keeping every layer's cache and output.
    pub(crate) fn forward_inference_cached(
        &self,
        batch: &Tensor<T>,
    ) -> Result<(Vec<Tensor<T>>, Vec<LayerCache<T>>)> {
        self.check_batch(batch)?;
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut x = batch.clone();
        for layer in &self.layers {
            let (y, c) = layer.forward_inference(&x)?;
            outputs.push(y.clone());
            caches.push(c);
            x = y;
        }
        Ok((outputs, caches))
    }

    /// Back-propagates `upstream` (gradient of the final output) down to the
    /// output of layer `stop_after`, or through every layer when `None`.
    /// Returns the gradient at the stopping point and the parameter gradients
    /// of the layers traversed.
    pub(crate) fn backprop(
        &self,
        caches: &[LayerCache<T>],
        upstream: Tensor<T>,
        stop_after: Option<usize>,
    ) -> Result<(Tensor<T>, Gradients<T>)> {
        if caches.len() != self.layers.len() {
            return Err(Error::State("backward without a full forward cache".into()));
        }
        let first_trainable = self.layers.iter().position(|l| l.has_trainable());
        let lowest = stop_after.map_or(0, |s| s + 1);
        let mut grad = upstream;
        let mut per_layer: Vec<Vec<ParamGrad<T>>> = Vec::new();
        for i in (lowest..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let need_input = stop_after.is_some() || first_trainable.is_some_and(|f| i > f);
            let (dx, pgrads) = layer.backward(&caches[i], &grad, need_input)?;
            let names = layer.params();
            let entries = names
                .iter()
                .filter(|p| p.trainable)
                .zip(pgrads)
                .map(|(p, values)| ParamGrad {
                    name: format!("{i}.{}.{}", layer.kind(), p.field),
                    values,
                })
                .collect();
            per_layer.push(entries);
            match dx {
                Some(dx) => grad = dx,
                None => break,
            }
        }
        let entries = per_layer.into_iter().rev().flatten().collect();
        Ok((grad, Gradients { entries }))
    }

    /// Training-mode forward and backward pass; the loss is the batch-mean
    /// cross-entropy. Moving statistics are updated as a side effect.
    pub fn backward(
        &mut self,
        batch: &Tensor<T>,
        labels: &[usize],
        rng: &mut SeededRng,
    ) -> Result<BackwardOutput<T>> {
        if self.mode != Mode::Training {
            return Err(Error::State("backward requires training mode".into()));
        }
        self.check_batch(batch)?;
        if labels.len() != batch.shape().n {
            return Err(Error::Shape(format!(
                "{} labels for a batch of {}",
                labels.len(),
                batch.shape().n
            )));
        }
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut x = batch.clone();
        for layer in self.layers.iter_mut() {
            let (y, c) = layer.forward(&x, Mode::Training, rng)?;
            caches.push(c);
            x = y;
        }
        let (loss, probs) = softmax_cross_entropy(&x, labels)?;
        let dlogits = softmax_cross_entropy_backward(&probs, labels)?;
        let (_, gradients) = self.backprop(&caches, dlogits, None)?;
        Ok(BackwardOutput {
            loss,
            logits: x,
            gradients,
        })
    }
}

/// Index of the largest value in each `(n, k, 1, 1)` row; first wins on ties.
pub fn argmax_rows<T: Real>(t: &Tensor<T>) -> Vec<usize> {
    let k = t.shape().c;
    t.data()
        .chunks_exact(k)
        .map(|row| {
            let mut best = 0;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
