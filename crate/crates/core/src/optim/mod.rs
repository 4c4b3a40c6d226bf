//! Parameter updates and learning-rate schedules.

mod adabelief;
mod schedule;
mod sgd;

pub use adabelief::{adabelief_step, AdaBelief, AdaBeliefConfig};
pub use range_test::{
    lr_range_test, sweep_lr, write_range_csv, RangePoint, RangeTestResult, StepObjective,
    DIVERGENCE_FACTOR, SMOOTHING,
};
pub use schedule::{clr_lr, plateau_update, ClrSchedule, PlateauPolicy, PlateauTracker};
pub use sgd::{sgd_step, Sgd};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Gradients, Network};
use crate::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    AdaBelief,
    Sgd,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adabelief" => Ok(OptimizerKind::AdaBelief),
            "sgd" => Ok(OptimizerKind::Sgd),
            _ => Err(Error::Config(format!("unknown optimizer `{s}` (adabelief|sgd)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer<T = f32> {
    AdaBelief(AdaBelief<T>),
    Sgd(Sgd),
}

impl<T: Real> Optimizer<T> {
    pub fn new(kind: OptimizerKind, config: AdaBeliefConfig, lr: f64) -> Self {
        match kind {
            OptimizerKind::AdaBelief => Optimizer::AdaBelief(AdaBelief::new(config, lr)),
            OptimizerKind::Sgd => Optimizer::Sgd(Sgd::new(lr)),
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        match self {
            Optimizer::AdaBelief(_) => OptimizerKind::AdaBelief,
            Optimizer::Sgd(_) => OptimizerKind::Sgd,
        }
    }

    pub fn lr(&self) -> f64 {
        match self {
            Optimizer::AdaBelief(a) => a.lr,
            Optimizer::Sgd(s) => s.lr,
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        match self {
            Optimizer::AdaBelief(a) => a.lr = lr,
            Optimizer::Sgd(s) => s.lr = lr,
        }
    }

    /// Number of updates applied so far.
    pub fn step_count(&self) -> u64 {
        match self {
            Optimizer::AdaBelief(a) => a.step,
            Optimizer::Sgd(s) => s.step,
        }
    }

    pub fn update(&mut self, net: &mut Network<T>, grads: &Gradients<T>) -> Result<()> {
        let mut params = net.trainable_params_mut();
        match self {
            Optimizer::AdaBelief(a) => a.step(&mut params, grads),
            Optimizer::Sgd(s) => s.step(&mut params, grads),
        }
    }
}
