use crate::error::{Error, Result};
use crate::layers::{
    activation_backward, apply_activation, batch_norm_backward, batch_norm_forward_cached,
    conv2d_backward, cross_correlate2d, dense_backward, dense_forward, dropout_backward,
    dropout_with_mask, pool2d, pool2d_backward, ActivationKind, BatchNormCache, BatchNormState,
    ConvParams, DropoutConfig, Mode, PoolIndices, PoolMode,
};
use crate::rng::SeededRng;
use crate::tensor::{flatten, Real, Shape4, Tensor};

/// One instantiated layer with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T = f32> {
    Rescale { scale: T },
    Conv(ConvParams<T>),
    BatchNorm(BatchNormState<T>),
    Activation(ActivationKind),
    Pool { mode: PoolMode, window: usize, stride: usize },
    Dropout { rate: f64 },
    Flatten,
    Dense { weights: Tensor<T>, bias: Vec<T> },
}

/// Forward-pass state kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerCache<T> {
    Empty,
    Input(Tensor<T>),
    BatchNorm(BatchNormCache<T>),
    Pool(PoolIndices),
    Dropout(Vec<T>),
    Flatten(Shape4),
}

/// A named view of one parameter vector.
pub struct ParamRef<'a, T> {
    pub field: &'static str,
    pub values: &'a [T],
    pub trainable: bool,
}

pub struct ParamMut<'a, T> {
    pub field: &'static str,
    pub values: &'a mut [T],
    pub trainable: bool,
}

impl<T: Real> Layer<T> {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Rescale { .. } => "rescale",
            Layer::Conv(_) => "conv",
            Layer::BatchNorm(_) => "batchnorm",
            Layer::Activation(_) => "activation",
            Layer::Pool { mode: PoolMode::Max, .. } => "maxpool",
            Layer::Pool { mode: PoolMode::Avg, .. } => "avgpool",
            Layer::Dropout { .. } => "dropout",
            Layer::Flatten => "flatten",
            Layer::Dense { .. } => "dense",
        }
    }

    pub fn has_trainable(&self) -> bool {
        matches!(self, Layer::Conv(_) | Layer::BatchNorm(_) | Layer::Dense { .. })
    }

    /// Runs the layer. Training mode updates batch-norm moving statistics and
    /// draws dropout masks from `rng`; inference mode touches neither.
    pub fn forward(
        &mut self,
        input: &Tensor<T>,
        mode: Mode,
        rng: &mut SeededRng,
    ) -> Result<(Tensor<T>, LayerCache<T>)> {
        match self {
            Layer::BatchNorm(state) if mode == Mode::Training => {
                let (y, c) = batch_norm_forward_cached(input, state, Mode::Training)?;
                Ok((y, LayerCache::BatchNorm(c)))
            }
            Layer::Dropout { rate } if mode == Mode::Training => {
                let cfg = DropoutConfig::new(*rate, Mode::Training)?;
                let (y, mask) = dropout_with_mask(input, cfg, rng);
                Ok((y, LayerCache::Dropout(mask)))
            }
            _ => self.forward_inference(input),
        }
    }

    pub fn forward_inference(&self, input: &Tensor<T>) -> Result<(Tensor<T>, LayerCache<T>)> {
        Ok(match self {
            Layer::Rescale { scale } => (input.map(|v| v * *scale), LayerCache::Empty),
            Layer::Conv(p) => (cross_correlate2d(input, p)?, LayerCache::Input(input.clone())),
            Layer::BatchNorm(state) => {
                let mut frozen = state.clone();
                let (y, c) = batch_norm_forward_cached(input, &mut frozen, Mode::Inference)?;
                (y, LayerCache::BatchNorm(c))
            }
            Layer::Activation(kind) => (apply_activation(*kind, input), LayerCache::Input(input.clone())),
            Layer::Pool { mode, window, stride } => {
                let (y, idx) = pool2d(input, *mode, *window, *stride)?;
                (y, LayerCache::Pool(idx))
            }
            Layer::Dropout { .. } => (input.clone(), LayerCache::Dropout(Vec::new())),
            Layer::Flatten => (flatten(input), LayerCache::Flatten(input.shape())),
            Layer::Dense { weights, bias } => {
                (dense_forward(input, weights, bias)?, LayerCache::Input(input.clone()))
            }
        })
    }

    /// Returns the input gradient (when requested) and the gradients of the
    /// trainable parameters in [`params`](Self::params) order.
    pub fn backward(
        &self,
        cache: &LayerCache<T>,
        upstream: &Tensor<T>,
        need_input_grad: bool,
    ) -> Result<(Option<Tensor<T>>, Vec<Vec<T>>)> {
        let missing = || Error::State(format!("{} backward without its forward cache", self.kind()));
        match (self, cache) {
            (Layer::Rescale { scale }, _) => {
                Ok((need_input_grad.then(|| upstream.map(|g| g * *scale)), vec![]))
            }
            (Layer::Conv(p), LayerCache::Input(x)) => {
                let g = conv2d_backward(x, p, upstream, need_input_grad)?;
                Ok((g.input, vec![g.kernels.into_data(), g.bias]))
            }
            (Layer::BatchNorm(state), LayerCache::BatchNorm(c)) => {
                let g = batch_norm_backward(c, &state.gamma, upstream)?;
                Ok((Some(g.input), vec![g.gamma, g.beta]))
            }
            (Layer::Activation(kind), LayerCache::Input(x)) => {
                Ok((Some(activation_backward(*kind, x, upstream)), vec![]))
            }
            (Layer::Pool { .. }, LayerCache::Pool(idx)) => Ok((Some(pool2d_backward(upstream, idx)?), vec![])),
            (Layer::Dropout { .. }, LayerCache::Dropout(mask)) => {
                Ok((Some(dropout_backward(upstream, mask)?), vec![]))
            }
            (Layer::Flatten, LayerCache::Flatten(shape)) => {
                Ok((Some(upstream.clone().reshape(*shape)?), vec![]))
            }
            (Layer::Dense { weights, bias }, LayerCache::Input(x)) => {
                let g = dense_backward(x, weights, bias, upstream, need_input_grad)?;
                Ok((g.input, vec![g.weights.into_data(), g.bias]))
            }
            _ => Err(missing()),
        }
    }

    pub fn params(&self) -> Vec<ParamRef<'_, T>> {
        fn p<'a, T>(field: &'static str, values: &'a [T], trainable: bool) -> ParamRef<'a, T> {
            ParamRef {
                field,
                values,
                trainable,
            }
        }
        match self {
            Layer::Conv(c) => vec![p("kernel", c.kernels.data(), true), p("bias", &c.bias, true)],
            Layer::BatchNorm(b) => vec![
                p("gamma", &b.gamma, true),
                p("beta", &b.beta, true),
                p("moving_mean", &b.moving_mean, false),
                p("moving_var", &b.moving_var, false),
            ],
            Layer::Dense { weights, bias } => {
                vec![p("weight", weights.data(), true), p("bias", bias, true)]
            }
            _ => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<ParamMut<'_, T>> {
        fn p<'a, T>(field: &'static str, values: &'a mut [T], trainable: bool) -> ParamMut<'a, T> {
            ParamMut {
                field,
                values,
                trainable,
            }
        }
        match self {
            Layer::Conv(c) => vec![
                p("kernel", c.kernels.data_mut(), true),
                p("bias", &mut c.bias, true),
            ],
            Layer::BatchNorm(b) => vec![
                p("gamma", &mut b.gamma, true),
                p("beta", &mut b.beta, true),
                p("moving_mean", &mut b.moving_mean, false),
                p("moving_var", &mut b.moving_var, false),
            ],
            Layer::Dense { weights, bias } => vec![
                p("weight", weights.data_mut(), true),
                p("bias", bias, true),
            ],
            _ => vec![],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_blocks_negative_gradient() {
        let layer = Layer::<f64>::Activation(ActivationKind::Relu);
        let x = Tensor::from_vec(Shape4::of(1, 2, 1, 1), vec![-1.0, 2.0]).unwrap();
        let (_, cache) = layer.forward_inference(&x).unwrap();
        let up = Tensor::filled(x.shape(), 1.0);
        let (dx, _) = layer.backward(&cache, &up, true).unwrap();
        assert_eq!(dx.unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn mismatched_cache_is_a_state_error() {
        let layer = Layer::<f64>::Flatten;
        let up = Tensor::zeros(Shape4::of(1, 4, 1, 1));
        assert!(matches!(
            layer.backward(&LayerCache::Empty, &up, true),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn inference_dropout_is_identity_both_ways() {
        let mut layer = Layer::<f64>::Dropout { rate: 0.5 };
        let x = Tensor::filled(Shape4::of(1, 8, 1, 1), 1.0);
        let mut rng = SeededRng::new(1);
        let (y, cache) = layer.forward(&x, Mode::Inference, &mut rng).unwrap();
        assert_eq!(y, x);
        let (dx, _) = layer.backward(&cache, &x, true).unwrap();
        assert_eq!(dx.unwrap(), x);
    }
}
