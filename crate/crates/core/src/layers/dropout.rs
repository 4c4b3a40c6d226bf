use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::rng::SeededRng;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropoutConfig {
    pub rate: f64,
    pub mode: Mode,
}

impl DropoutConfig {
    pub const DEFAULT_RATE: f64 = 0.3;

    pub fn new(rate: f64, mode: Mode) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        Ok(DropoutConfig { rate, mode })
    }
}

pub fn dropout<T: Real>(input: &Tensor<T>, cfg: DropoutConfig, rng: &mut SeededRng) -> Tensor<T> {
    dropout_with_mask(input, cfg, rng).0
}

/// Inverted dropout. Returns the output and the per-element multiplier
/// (0 or 1/(1 − rate)); the mask is empty when the layer is the identity.
pub fn dropout_with_mask<T: Real>(
    input: &Tensor<T>,
    cfg: DropoutConfig,
    rng: &mut SeededRng,
) -> (Tensor<T>, Vec<T>) {
    if cfg.mode == Mode::Inference || cfg.rate == 0.0 {
        return (input.clone(), Vec::new());
    }
    let keep = T::lit(1.0 / (1.0 - cfg.rate));
    let mask: Vec<T> = (0..input.len())
        .map(|_| if rng.next_f64() < cfg.rate { T::zero() } else { keep })
        .collect();
    let mut out = input.clone();
    for (v, &m) in out.data_mut().iter_mut().zip(&mask) {
        *v *= m;
    }
    (out, mask)
}

pub fn dropout_backward<T: Real>(upstream: &Tensor<T>, mask: &[T]) -> Result<Tensor<T>> {
    if mask.is_empty() {
        return Ok(upstream.clone());
    }
    if mask.len() != upstream.len() {
        return Err(Error::State("dropout mask does not match upstream gradient".into()));
    }
    let mut dx = upstream.clone();
    for (v, &m) in dx.data_mut().iter_mut().zip(mask) {
        *v *= m;
    }
    Ok(dx)
}
