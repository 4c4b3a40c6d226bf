//! Elementwise activations and their derivatives.
//!
//! | kind  | f(x)                                         | f'(x)                                  |
//! |-------|----------------------------------------------|----------------------------------------|
//! | relu  | max(0, x)                                    | 1 if x > 0 else 0                      |
//! | gelu  | x·Φ(x) = ½x(1 + erf(x/√2))                   | Φ(x) + x·φ(x)                          |
//! | selu  | λx (x > 0), λα(eˣ − 1) (x ≤ 0)               | λ (x > 0), λαeˣ (x ≤ 0)                |
//! | mish  | x·tanh(softplus(x))                          | tanh(sp) + x·sech²(sp)·σ(x)            |
//! | swish | x·σ(x)                                       | σ(x) + x·σ(x)(1 − σ(x))                |
//! | lisht | x·tanh(x)                                    | tanh(x) + x(1 − tanh²(x))              |
//!
//! with λ = 1.0507009873554805, α = 1.6732632423543772, σ the logistic
//! function and softplus(x) = ln(1 + eˣ). Above x = 20 mish is taken as the
//! identity.

use serde::{Deserialize, Serialize};

use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Relu,
    Gelu,
    Selu,
    #[default]
    Mish,
    Swish,
    Lisht,
}

impl ActivationKind {
    pub const ALL: [ActivationKind; 6] = [
        ActivationKind::Relu,
        ActivationKind::Gelu,
        ActivationKind::Selu,
        ActivationKind::Mish,
        ActivationKind::Swish,
        ActivationKind::Lisht,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::Relu => "relu",
            ActivationKind::Gelu => "gelu",
            ActivationKind::Selu => "selu",
            ActivationKind::Mish => "mish",
            ActivationKind::Swish => "swish",
            ActivationKind::Lisht => "lisht",
        }
    }
}

impl std::str::FromStr for ActivationKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ActivationKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown activation `{s}`"))
    }
}

const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
const SELU_ALPHA: f64 = 1.673_263_242_354_377_3;
const SOFTPLUS_LINEAR: f64 = 20.0;

/// tanh(softplus(x)) from a single exponential: with n = eˣ(eˣ + 2),
/// tanh(ln(1 + eˣ)) = n / (n + 2).
fn mish_tanh<T: Real>(x: T) -> T {
    if x > T::lit(SOFTPLUS_LINEAR) {
        return T::one();
    }
    let e = x.exp();
    let n = e * (e + T::lit(2.0));
    n / (n + T::lit(2.0))
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn gauss_cdf<T: Real>(x: T) -> T {
    T::lit(0.5 * (1.0 + libm::erf(x.f64() / std::f64::consts::SQRT_2)))
}

fn gauss_pdf<T: Real>(x: T) -> T {
    let v = x.f64();
    T::lit((-0.5 * v * v).exp() / (2.0 * std::f64::consts::PI).sqrt())
}

#[inline]
pub fn activate<T: Real>(kind: ActivationKind, x: T) -> T {
    match kind {
        ActivationKind::Relu => x.max(T::zero()),
        ActivationKind::Gelu => x * gauss_cdf(x),
        ActivationKind::Selu => {
            if x > T::zero() {
                T::lit(SELU_LAMBDA) * x
            } else {
                T::lit(SELU_LAMBDA * SELU_ALPHA) * x.exp_m1()
            }
        }
        ActivationKind::Mish => x * mish_tanh(x),
        ActivationKind::Swish => x * sigmoid(x),
        ActivationKind::Lisht => x * x.tanh(),
    }
}

#[inline]
pub fn derivative<T: Real>(kind: ActivationKind, x: T) -> T {
    match kind {
        ActivationKind::Relu => {
            if x > T::zero() {
                T::one()
            } else {
                T::zero()
            }
        }
        ActivationKind::Gelu => gauss_cdf(x) + x * gauss_pdf(x),
        ActivationKind::Selu => {
            if x > T::zero() {
                T::lit(SELU_LAMBDA)
            } else {
                T::lit(SELU_LAMBDA * SELU_ALPHA) * x.exp()
            }
        }
        ActivationKind::Mish => {
            if x > T::lit(SOFTPLUS_LINEAR) {
                return T::one();
            }
            let e = x.exp();
            let n = e * (e + T::lit(2.0));
            let t = n / (n + T::lit(2.0));
            t + x * (T::one() - t * t) * (e / (T::one() + e))
        }
        ActivationKind::Swish => {
            let s = sigmoid(x);
            s + x * s * (T::one() - s)
        }
        ActivationKind::Lisht => {
            let t = x.tanh();
            t + x * (T::one() - t * t)
        }
    }
}

// Each arm gets its own monomorphic loop so the kind is not re-dispatched per element.
macro_rules! per_kind {
    ($kind:expr, $k:ident => $body:expr) => {
        match $kind {
            ActivationKind::Relu => { const $k: ActivationKind = ActivationKind::Relu; $body }
            ActivationKind::Gelu => { const $k: ActivationKind = ActivationKind::Gelu; $body }
            ActivationKind::Selu => { const $k: ActivationKind = ActivationKind::Selu; $body }
            ActivationKind::Mish => { const $k: ActivationKind = ActivationKind::Mish; $body }
            ActivationKind::Swish => { const $k: ActivationKind = ActivationKind::Swish; $body }
            ActivationKind::Lisht => { const $k: ActivationKind = ActivationKind::Lisht; $body }
        }
    };
}

pub fn apply_activation<T: Real>(kind: ActivationKind, x: &Tensor<T>) -> Tensor<T> {
    per_kind!(kind, K => x.map(|v| activate(K, v)))
}

/// Gradient through the activation, given the pre-activation input.
pub fn activation_backward<T: Real>(kind: ActivationKind, input: &Tensor<T>, upstream: &Tensor<T>) -> Tensor<T> {
    let mut dx = upstream.clone();
    per_kind!(kind, K => {
        for (g, &x) in dx.data_mut().iter_mut().zip(input.data()) {
            *g *= derivative(K, x);
        }
    });
    dx
}
