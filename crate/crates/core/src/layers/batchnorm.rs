use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::tensor::{Real, Tensor};

/// Per-channel batch normalization parameters and running statistics.
///
/// Channels are axis 1; statistics are taken over (n, h, w), so the same
/// state works after convolutions and after dense layers (h = w = 1).
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState<T = f32> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub moving_mean: Vec<T>,
    pub moving_var: Vec<T>,
    pub momentum: T,
    pub epsilon: T,
}

impl<T: Real> BatchNormState<T> {
    pub const DEFAULT_MOMENTUM: f64 = 0.99;
    pub const DEFAULT_EPSILON: f64 = 1e-3;

    /// gamma = 1, beta = 0, moving mean 0, moving variance 1.
    pub fn new(channels: usize, momentum: f64, epsilon: f64) -> Self {
        BatchNormState {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            moving_mean: vec![T::zero(); channels],
            moving_var: vec![T::one(); channels],
            momentum: T::lit(momentum),
            epsilon: T::lit(epsilon),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormCache<T> {
    pub mode: Mode,
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct BatchNormGrads<T> {
    pub input: Tensor<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

pub fn batch_norm_forward<T: Real>(
    input: &Tensor<T>,
    state: &mut BatchNormState<T>,
    mode: Mode,
) -> Result<Tensor<T>> {
    batch_norm_forward_cached(input, state, mode).map(|(y, _)| y)
}

/// Training mode normalizes with batch statistics and folds them into the
/// moving averages (`moving ← momentum·moving + (1 − momentum)·batch`, biased
/// batch variance); inference mode uses the moving statistics only.
pub fn batch_norm_forward_cached<T: Real>(
    input: &Tensor<T>,
    state: &mut BatchNormState<T>,
    mode: Mode,
) -> Result<(Tensor<T>, BatchNormCache<T>)> {
    let s = input.shape();
    if s.c != state.channels() {
        return Err(Error::Shape(format!(
            "batch norm over {} channels received input {s}",
            state.channels()
        )));
    }
    let plane = s.plane_len();
    let (mean, var): (Vec<T>, Vec<T>) = match mode {
        Mode::Training => {
            let count = (s.n * plane) as f64;
            let mut mean = vec![0.0f64; s.c];
            let mut var = vec![0.0f64; s.c];
            for c in 0..s.c {
                let mut acc = 0.0;
                for n in 0..s.n {
                    acc += input.plane(n, c).iter().map(|x| x.f64()).sum::<f64>();
                }
                let m = acc / count;
                let mut sq = 0.0;
                for n in 0..s.n {
                    sq += input
                        .plane(n, c)
                        .iter()
                        .map(|x| {
                            let d = x.f64() - m;
                            d * d
                        })
                        .sum::<f64>();
                }
                mean[c] = m;
                var[c] = sq / count;
            }
            let mom = state.momentum;
            for c in 0..s.c {
                state.moving_mean[c] =
                    mom * state.moving_mean[c] + (T::one() - mom) * T::lit(mean[c]);
                state.moving_var[c] = mom * state.moving_var[c] + (T::one() - mom) * T::lit(var[c]);
            }
            (
                mean.into_iter().map(T::lit).collect(),
                var.into_iter().map(T::lit).collect(),
            )
        }
        Mode::Inference => (state.moving_mean.clone(), state.moving_var.clone()),
    };
    let inv_std: Vec<T> = var
        .iter()
        .map(|&v| T::one() / (v + state.epsilon).sqrt())
        .collect();
    let mut xhat = Tensor::zeros(s);
    let mut out = Tensor::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            let start = s.offset(n, c, 0, 0);
            let (m, is, g, b) = (mean[c], inv_std[c], state.gamma[c], state.beta[c]);
            let src = &input.data()[start..start + plane];
            let xh = &mut xhat.data_mut()[start..start + plane];
            for (d, &x) in xh.iter_mut().zip(src) {
                *d = (x - m) * is;
            }
            let o = &mut out.data_mut()[start..start + plane];
            for (d, &x) in o.iter_mut().zip(xh.iter()) {
                *d = g * x + b;
            }
        }
    }
    Ok((out, BatchNormCache { mode, xhat, inv_std }))
}

pub fn batch_norm_backward<T: Real>(
    cache: &BatchNormCache<T>,
    gamma: &[T],
    upstream: &Tensor<T>,
) -> Result<BatchNormGrads<T>> {
    let s = cache.xhat.shape();
    if upstream.shape() != s || gamma.len() != s.c {
        return Err(Error::Shape(format!(
            "batch norm backward: upstream {} vs cached {s}",
            upstream.shape()
        )));
    }
    let plane = s.plane_len();
    let mut dgamma = vec![T::zero(); s.c];
    let mut dbeta = vec![T::zero(); s.c];
    for c in 0..s.c {
        let (mut sg, mut sb) = (0.0f64, 0.0f64);
        for n in 0..s.n {
            let start = s.offset(n, c, 0, 0);
            let dy = &upstream.data()[start..start + plane];
            let xh = &cache.xhat.data()[start..start + plane];
            for (&g, &x) in dy.iter().zip(xh) {
                sb += g.f64();
                sg += (g * x).f64();
            }
        }
        dgamma[c] = T::lit(sg);
        dbeta[c] = T::lit(sb);
    }
    let mut dx = Tensor::zeros(s);
    let count = T::lit((s.n * plane) as f64);
    for n in 0..s.n {
        for c in 0..s.c {
            let start = s.offset(n, c, 0, 0);
            let dy = &upstream.data()[start..start + plane];
            let xh = &cache.xhat.data()[start..start + plane];
            let out = &mut dx.data_mut()[start..start + plane];
            let scale = gamma[c] * cache.inv_std[c];
            match cache.mode {
                Mode::Inference => {
                    for (d, &g) in out.iter_mut().zip(dy) {
                        *d = g * scale;
                    }
                }
                Mode::Training => {
                    let (sb, sg) = (dbeta[c], dgamma[c]);
                    let k = scale / count;
                    for ((d, &g), &x) in out.iter_mut().zip(dy).zip(xh) {
                        *d = k * (count * g - sb - x * sg);
                    }
                }
            }
        }
    }
    Ok(BatchNormGrads {
        input: dx,
        gamma: dgamma,
        beta: dbeta,
    })
}
