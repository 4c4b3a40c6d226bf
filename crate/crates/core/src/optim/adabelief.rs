use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::Gradients;
use crate::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaBeliefConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Decoupled weight decay; 0 disables it.
    #[serde(default)]
    pub weight_decay: f64,
}

impl Default for AdaBeliefConfig {
    fn default() -> Self {
        AdaBeliefConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-14,
            weight_decay: 0.0,
        }
    }
}

impl AdaBeliefConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..1.0).contains(&v);
        if !unit(self.beta1) || !unit(self.beta2) {
            return Err(Error::Config(format!(
                "betas ({}, {}) must lie in [0, 1)",
                self.beta1, self.beta2
            )));
        }
        if !(self.epsilon > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("epsilon must be positive, weight decay ≥ 0".into()));
        }
        Ok(())
    }
}

/// One AdaBelief update of a single parameter vector at step `t` (1-based):
///
/// ```text
/// m ← β1·m + (1 − β1)·g
/// s ← β2·s + (1 − β2)·(g − m)² + ε
/// θ ← θ − lr · (m / (1 − β1ᵗ)) / (√(s / (1 − β2ᵗ)) + ε)
/// ```
pub fn adabelief_step<T: Real>(
    params: &mut [T],
    grads: &[T],
    m: &mut [T],
    s: &mut [T],
    t: u64,
    cfg: &AdaBeliefConfig,
    lr: f64,
) {
    let (b1, b2, eps) = (T::lit(cfg.beta1), T::lit(cfg.beta2), T::lit(cfg.epsilon));
    let (one_b1, one_b2) = (T::lit(1.0 - cfg.beta1), T::lit(1.0 - cfg.beta2));
    let ti = i32::try_from(t).unwrap_or(i32::MAX);
    let bc1 = T::lit(1.0 - cfg.beta1.powi(ti));
    let bc2 = T::lit(1.0 - cfg.beta2.powi(ti));
    let lr_t = T::lit(lr);
    let decay = T::lit(lr * cfg.weight_decay);
    for (((p, &g), m), s) in params.iter_mut().zip(grads).zip(m).zip(s) {
        *m = b1 * *m + one_b1 * g;
        let d = g - *m;
        *s = b2 * *s + one_b2 * d * d + eps;
        let m_hat = *m / bc1;
        let s_hat = *s / bc2;
        if cfg.weight_decay > 0.0 {
            *p -= decay * *p;
        }
        *p -= lr_t * m_hat / (s_hat.sqrt() + eps);
    }
}

pub(crate) fn check_grads<T: Real>(params: &[(String, &mut [T])], grads: &Gradients<T>) -> Result<()> {
    if params.len() != grads.entries.len() {
        return Err(Error::Shape(format!(
            "{} trainable parameters but {} gradients",
            params.len(),
            grads.entries.len()
        )));
    }
    for ((name, values), g) in params.iter().zip(&grads.entries) {
        if *name != g.name || values.len() != g.values.len() {
            return Err(Error::Shape(format!(
                "gradient `{}` ({}) does not match parameter `{name}` ({})",
                g.name,
                g.values.len(),
                values.len()
            )));
        }
    }
    if let Some(bad) = grads
        .entries
        .iter()
        .find(|g| g.values.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::NonFinite(bad.name.clone()));
    }
    Ok(())
}

/// AdaBelief optimizer state across a whole network.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaBelief<T = f32> {
    pub config: AdaBeliefConfig,
    pub lr: f64,
    pub step: u64,
    /// First moments, one vector per trainable parameter.
    pub m: Vec<Vec<T>>,
    /// Belief second moments, one vector per trainable parameter.
    pub s: Vec<Vec<T>>,
}

impl<T: Real> AdaBelief<T> {
    pub fn new(config: AdaBeliefConfig, lr: f64) -> Self {
        AdaBelief {
            config,
            lr,
            step: 0,
            m: Vec::new(),
            s: Vec::new(),
        }
    }

    /// Applies one update. Nothing changes if any gradient is non-finite.
    pub fn step(&mut self, params: &mut [(String, &mut [T])], grads: &Gradients<T>) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        check_grads(params, grads)?;
        if self.m.is_empty() {
            self.m = params.iter().map(|(_, v)| vec![T::zero(); v.len()]).collect();
            self.s = self.m.clone();
        }
        if self.m.len() != params.len() || self.m.iter().zip(params.iter()).any(|(m, p)| m.len() != p.1.len()) {
            return Err(Error::State("optimizer moments do not match the network".into()));
        }
        self.step += 1;
        for (i, ((_, values), g)) in params.iter_mut().zip(&grads.entries).enumerate() {
            adabelief_step(
                values,
                &g.values,
                &mut self.m[i],
                &mut self.s[i],
                self.step,
                &self.config,
                self.lr,
            );
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let cfg = AdaBeliefConfig::default();
        let mut p = vec![1.5f64, -2.0];
        let (mut m, mut s) = (vec![0.0; 2], vec![0.0; 2]);
        adabelief_step(&mut p, &[0.0, 0.0], &mut m, &mut s, 1, &cfg, 1e-3);
        assert_eq!(p, vec![1.5, -2.0]);
    }

    #[test]
    fn single_scalar_step_matches_hand_value() {
        // m = 0.01, s = 1e-3·0.09² + 1e-14, m̂ = 0.1, ŝ = 0.0081 + 1e-11;
        // θ = 1 − 1e-3·0.1/(√ŝ + 1e-14), evaluated at 50 digits.
        let cfg = AdaBeliefConfig::default();
        let mut p = [1.0f64];
        let (mut m, mut s) = ([0.0], [0.0]);
        adabelief_step(&mut p, &[0.1], &mut m, &mut s, 1, &cfg, 1e-3);
        assert!((p[0] - 0.998_888_888_889_574_9).abs() < 1e-12, "{}", p[0]);
        assert!(s[0] >= 0.0);
    }

    #[test]
    fn belief_moment_nonnegative_and_updates_bounded() {
        let mut rng = SeededRng::new(42);
        let cfg = AdaBeliefConfig::default();
        let n = 16;
        let mut p: Vec<f32> = (0..n).map(|_| rng.uniform(-1.0, 1.0) as f32).collect();
        let (mut m, mut s) = (vec![0.0f32; n], vec![0.0f32; n]);
        let lr = 1e-3;
        for t in 1..=10_000 {
            let g: Vec<f32> = (0..n).map(|_| (rng.normal() * 10f64.powf(rng.uniform(-6.0, 3.0))) as f32).collect();
            let before = p.clone();
            adabelief_step(&mut p, &g, &mut m, &mut s, t, &cfg, lr);
            for i in 0..n {
                assert!(p[i].is_finite() && s[i] >= 0.0);
                assert!(((p[i] - before[i]).abs() as f64) <= lr * 1e6);
            }
        }
    }

    #[test]
    fn quadratic_bowl_converges() {
        // f(x, y) = x² + 10·y²
        let cfg = AdaBeliefConfig::default();
        let mut p = [1.0f64, 1.0];
        let (mut m, mut s) = ([0.0; 2], [0.0; 2]);
        let f = |p: &[f64; 2]| p[0] * p[0] + 10.0 * p[1] * p[1];
        for t in 1..=500 {
            let g = [2.0 * p[0], 20.0 * p[1]];
            adabelief_step(&mut p, &g, &mut m, &mut s, t, &cfg, 1e-2);
        }
        assert!(f(&p) < 1e-6, "{}", f(&p));
    }

    #[test]
    fn identical_runs_are_bitwise_equal() {
        let run = || {
            let mut rng = SeededRng::new(9);
            let cfg = AdaBeliefConfig::default();
            let mut p = vec![0.5f32; 8];
            let (mut m, mut s) = (vec![0.0f32; 8], vec![0.0f32; 8]);
            for t in 1..=100 {
                let g: Vec<f32> = (0..8).map(|_| rng.normal() as f32).collect();
                adabelief_step(&mut p, &g, &mut m, &mut s, t, &cfg, 1e-3);
            }
            p.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
