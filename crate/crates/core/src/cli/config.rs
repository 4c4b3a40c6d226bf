use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::ActivationKind;
use crate::network::{NetworkSpec, ReferenceOptions};
use crate::optim::{AdaBeliefConfig, ClrSchedule, OptimizerKind, PlateauPolicy};

/// Everything a training run needs. Written to `config.snapshot` in the run
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data_dir: PathBuf,
    pub run_dir: PathBuf,
    pub image_size: usize,
    pub batch_size: usize,
    /// Total epochs; a resumed run continues up to this count.
    pub epochs: u64,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    /// Constant rate, or the upper bound of the cyclical rate.
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    pub activation: ActivationKind,
    pub clr: bool,
    pub clr_min_lr: f64,
    /// Steps per half cycle; unset means two epochs' worth of batches.
    pub clr_step_size: Option<u64>,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub plateau_floor: f64,
    pub dropout: f64,
    pub bn_momentum: f64,
    pub prefetch: usize,
    pub resume: Option<PathBuf>,
    /// Stop once validation accuracy reaches this value.
    pub target_val_acc: Option<f64>,
}

/// Optional values for every [`RunConfig`] field, as flags or as a TOML
/// file. Flags win over the file; unset fields take the defaults.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunOverrides {
    /// Directory holding train/ and valid/ class trees.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Output directory for config, log and checkpoints.
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
    #[arg(long)]
    pub image_size: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// adabelief | sgd
    #[arg(long)]
    pub optimizer: Option<OptimizerKind>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// relu | gelu | selu | mish | swish | lisht
    #[arg(long)]
    pub activation: Option<ActivationKind>,
    #[arg(long)]
    pub clr: Option<bool>,
    #[arg(long)]
    pub clr_min_lr: Option<f64>,
    #[arg(long)]
    pub clr_step_size: Option<u64>,
    #[arg(long)]
    pub plateau_factor: Option<f64>,
    #[arg(long)]
    pub plateau_patience: Option<usize>,
    #[arg(long)]
    pub plateau_floor: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub bn_momentum: Option<f64>,
    #[arg(long)]
    pub prefetch: Option<usize>,
    /// Checkpoint to continue from.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub target_val_acc: Option<f64>,
}

macro_rules! overlay_fields {
    ($base:ident, $top:ident, $($f:ident),*) => {
        RunOverrides { $($f: $top.$f.or($base.$f)),* }
    };
}

impl RunOverrides {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("config file: {}", e.message())))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Fields set in `top` replace those of `self`.
    pub fn overlay(self, top: RunOverrides) -> RunOverrides {
        let base = self;
        overlay_fields!(
            base, top, data_dir, run_dir, image_size, batch_size, epochs, seed, optimizer, lr, beta1,
            beta2, epsilon, weight_decay, activation, clr, clr_min_lr, clr_step_size, plateau_factor,
            plateau_patience, plateau_floor, dropout, bn_momentum, prefetch, resume, target_val_acc
        )
    }

    /// Fills defaults and validates.
    pub fn finish(self) -> Result<RunConfig> {
        let missing = |name: &str| Error::Config(format!("`{name}` is required"));
        let ab = AdaBeliefConfig::default();
        let plateau = PlateauPolicy::default();
        let cfg = RunConfig {
            data_dir: self.data_dir.ok_or_else(|| missing("data_dir"))?,
            run_dir: self.run_dir.ok_or_else(|| missing("run_dir"))?,
            image_size: self.image_size.unwrap_or(128),
            batch_size: self.batch_size.unwrap_or(128),
            epochs: self.epochs.ok_or_else(|| missing("epochs"))?,
            seed: self.seed.unwrap_or(42),
            optimizer: self.optimizer.unwrap_or_default(),
            lr: self.lr.unwrap_or(1e-2),
            beta1: self.beta1.unwrap_or(ab.beta1),
            beta2: self.beta2.unwrap_or(ab.beta2),
            epsilon: self.epsilon.unwrap_or(ab.epsilon),
            weight_decay: self.weight_decay.unwrap_or(ab.weight_decay),
            activation: self.activation.unwrap_or_default(),
            clr: self.clr.unwrap_or(true),
            clr_min_lr: self.clr_min_lr.unwrap_or(1e-3),
            clr_step_size: self.clr_step_size,
            plateau_factor: self.plateau_factor.unwrap_or(plateau.factor),
            plateau_patience: self.plateau_patience.unwrap_or(plateau.patience),
            plateau_floor: self.plateau_floor.unwrap_or(plateau.floor),
            dropout: self.dropout.unwrap_or(0.3),
            bn_momentum: self.bn_momentum.unwrap_or(0.99),
            prefetch: self.prefetch.unwrap_or(2),
            resume: self.resume,
            target_val_acc: self.target_val_acc,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn field_error(name: &str, value: impl std::fmt::Display, rule: &str) -> Error {
    Error::Config(format!("`{name}` = {value}: {rule}"))
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(field_error("batch_size", self.batch_size, "must be ≥ 1"));
        }
        if self.epochs == 0 {
            return Err(field_error("epochs", self.epochs, "must be ≥ 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(field_error("lr", self.lr, "must be positive"));
        }
        if self.clr && !(self.clr_min_lr > 0.0 && self.clr_min_lr < self.lr) {
            return Err(field_error("clr_min_lr", self.clr_min_lr, "must lie in (0, lr)"));
        }
        if self.clr_step_size == Some(0) {
            return Err(field_error("clr_step_size", 0, "must be ≥ 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(field_error("dropout", self.dropout, "must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.bn_momentum) {
            return Err(field_error("bn_momentum", self.bn_momentum, "must lie in [0, 1)"));
        }
        if let Some(t) = self.target_val_acc {
            if !(t > 0.0 && t <= 1.0) {
                return Err(field_error("target_val_acc", t, "must lie in (0, 1]"));
            }
        }
        self.adabelief()
            .validate()
            .map_err(|e| Error::Config(format!("optimizer settings: {e}")))?;
        self.plateau()
            .validate()
            .map_err(|e| Error::Config(format!("plateau settings: {e}")))?;
        self.network_spec().validate().map_err(|e| {
            field_error("image_size", self.image_size, &format!("unusable with the reference network ({e})"))
        })?;
        Ok(())
    }

    pub fn adabelief(&self) -> AdaBeliefConfig {
        AdaBeliefConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            weight_decay: self.weight_decay,
        }
    }

    pub fn plateau(&self) -> PlateauPolicy {
        PlateauPolicy {
            factor: self.plateau_factor,
            patience: self.plateau_patience,
            floor: if self.clr {
                self.plateau_floor.max(self.clr_min_lr)
            } else {
                self.plateau_floor
            },
            threshold: PlateauPolicy::default().threshold,
        }
    }

    /// The reference network for this run. Inputs arrive in [0, 1], so the
    /// leading rescale layer is the identity.
    pub fn network_spec(&self) -> NetworkSpec {
        NetworkSpec::reference(ReferenceOptions {
            image_size: self.image_size,
            input_scale: 1.0,
            activation: self.activation,
            dropout: self.dropout,
            bn_momentum: self.bn_momentum,
            ..Default::default()
        })
    }

    /// Rate at optimizer step `step` given the current (plateau-reduced)
    /// upper rate `base_lr`. With the cyclical schedule the rate swings
    /// between `clr_min_lr` and `base_lr`, and stays at `clr_min_lr` once
    /// `base_lr` has fallen to it.
    pub fn lr_at(&self, step: u64, base_lr: f64, batches_per_epoch: usize) -> f64 {
        if !self.clr || base_lr <= self.clr_min_lr {
            return if self.clr { self.clr_min_lr } else { base_lr };
        }
        let schedule = ClrSchedule {
            min_lr: self.clr_min_lr,
            max_lr: base_lr,
            step_size: self.clr_step_size.unwrap_or(2 * batches_per_epoch.max(1) as u64),
        };
        schedule.lr(step)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> RunOverrides {
        RunOverrides {
            data_dir: Some("d".into()),
            run_dir: Some("r".into()),
            epochs: Some(3),
            ..Default::default()
        }
    }

    #[test]
    fn defaults_and_required() {
        let cfg = base().finish().unwrap();
        assert_eq!((cfg.image_size, cfg.batch_size, cfg.activation), (128, 128, ActivationKind::Mish));
        assert_eq!(cfg.optimizer, OptimizerKind::AdaBelief);
        let err = RunOverrides::default().finish().unwrap_err();
        assert!(err.to_string().contains("data_dir"));
    }

    #[test]
    fn flags_win_over_file() {
        let file = RunOverrides::from_toml("batch_size = 64\nlr = 0.05\nactivation = \"relu\"\n").unwrap();
        let flags = RunOverrides {
            batch_size: Some(32),
            ..base()
        };
        let cfg = file.overlay(flags).finish().unwrap();
        assert_eq!(cfg.batch_size, 32);
        assert_eq!(cfg.lr, 0.05);
        assert_eq!(cfg.activation, ActivationKind::Relu);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_named() {
        assert!(RunOverrides::from_toml("batch = 3\n").is_err());
        for (o, name) in [
            (RunOverrides { batch_size: Some(0), ..base() }, "batch_size"),
            (RunOverrides { dropout: Some(1.5), ..base() }, "dropout"),
            (RunOverrides { image_size: Some(16), ..base() }, "image_size"),
            (RunOverrides { clr_min_lr: Some(1.0), ..base() }, "clr_min_lr"),
            (RunOverrides { lr: Some(-1.0), ..base() }, "lr"),
        ] {
            let e = o.finish().unwrap_err();
            assert!(e.to_string().contains(name), "{e}");
            assert_eq!(e.exit_code(), 1);
        }
    }

    #[test]
    fn snapshot_round_trips() {
        let cfg = RunOverrides {
            resume: Some("x.ckpt".into()),
            clr_step_size: Some(7),
            ..base()
        }
        .finish()
        .unwrap();
        let back: RunConfig = toml::from_str(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn cyclical_rate_follows_base() {
        let cfg = RunOverrides {
            lr: Some(0.01),
            clr_min_lr: Some(0.001),
            clr_step_size: Some(4),
            ..base()
        }
        .finish()
        .unwrap();
        assert_eq!(cfg.lr_at(0, 0.01, 10), 0.001);
        assert!((cfg.lr_at(4, 0.01, 10) - 0.01).abs() < 1e-15);
        assert!((cfg.lr_at(4, 0.005, 10) - 0.005).abs() < 1e-15);
        assert_eq!(cfg.lr_at(4, 0.001, 10), 0.001);
        let flat = RunConfig { clr: false, ..cfg };
        assert_eq!(flat.lr_at(4, 0.02, 10), 0.02);
    }
}
