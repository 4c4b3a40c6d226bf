use crate::error::{Error, Result};
use crate::network::Gradients;
use crate::optim::adabelief::check_grads;
use crate::tensor::Real;

/// `θ ← θ − lr·g`. Leaves `params` untouched on a non-finite gradient.
pub fn sgd_step<T: Real>(params: &mut [T], grads: &[T], lr: f64) -> Result<()> {
    if !(lr > 0.0) {
        return Err(Error::Config(format!("learning rate {lr} must be positive")));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("<slice>".into()));
    }
    let lr = T::lit(lr);
    for (p, &g) in params.iter_mut().zip(grads) {
        *p -= lr * g;
    }
    Ok(())
}

/// Plain stochastic gradient descent, kept as a baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub lr: f64,
    pub step: u64,
}

impl Sgd {
    pub fn new(lr: f64) -> Self {
        Sgd { lr, step: 0 }
    }

    pub fn step<T: Real>(&mut self, params: &mut [(String, &mut [T])], grads: &Gradients<T>) -> Result<()> {
        check_grads(params, grads)?;
        for ((_, values), g) in params.iter_mut().zip(&grads.entries) {
            sgd_step(values, &g.values, self.lr)?;
        }
        self.step += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_step() {
        let mut p = [2.0f64];
        sgd_step(&mut p, &[1.0], 0.5).unwrap();
        assert_eq!(p, [1.5]);
        sgd_step(&mut p, &[0.0], 0.5).unwrap();
        assert_eq!(p, [1.5]);
    }

    #[test]
    fn converges_on_parabola() {
        // f(θ) = θ², f' = 2θ, so θ ← 0.2·θ per step.
        let mut p = [1.0f64];
        for _ in 0..50 {
            let g = [2.0 * p[0]];
            sgd_step(&mut p, &g, 0.4).unwrap();
        }
        assert!(p[0].abs() < 1e-3);
    }

    #[test]
    fn rejects_non_finite() {
        let mut p = [1.0f32, 2.0];
        assert!(sgd_step(&mut p, &[f32::NAN, 0.0], 0.1).is_err());
        assert_eq!(p, [1.0, 2.0]);
    }
}
