//! Learning-rate schedules: the triangular cyclical rate (per step) and
//! plateau reduction (per epoch).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClrSchedule {
    pub min_lr: f64,
    pub max_lr: f64,
    /// Steps per half cycle.
    pub step_size: u64,
}

impl ClrSchedule {
    pub fn new(min_lr: f64, max_lr: f64, step_size: u64) -> Result<Self> {
        if !(min_lr > 0.0 && min_lr < max_lr && max_lr.is_finite()) {
            return Err(Error::Config(format!(
                "cyclical bounds need 0 < min < max, got {min_lr}..{max_lr}"
            )));
        }
        if step_size == 0 {
            return Err(Error::Config("cyclical step size must be ≥ 1".into()));
        }
        Ok(ClrSchedule {
            min_lr,
            max_lr,
            step_size,
        })
    }

    pub fn lr(&self, step: u64) -> f64 {
        clr_lr(self, step)
    }
}

/// Triangular wave starting at `min_lr`, peaking at `max_lr` after
/// `step_size` steps and returning after `2·step_size`.
pub fn clr_lr(schedule: &ClrSchedule, step: u64) -> f64 {
    // Reducing to the first period keeps lr(step) = lr(step + 2·step_size) exact.
    let step = step % (2 * schedule.step_size);
    let ss = schedule.step_size as f64;
    let cycle = (1.0 + step as f64 / (2.0 * ss)).floor();
    let x = (step as f64 / ss - 2.0 * cycle + 1.0).abs();
    schedule.min_lr + (schedule.max_lr - schedule.min_lr) * (1.0 - x).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauPolicy {
    pub factor: f64,
    pub patience: usize,
    pub floor: f64,
    /// Minimum absolute decrease that counts as an improvement.
    pub threshold: f64,
}

impl Default for PlateauPolicy {
    fn default() -> Self {
        PlateauPolicy {
            factor: 0.1,
            patience: 10,
            floor: 1e-6,
            threshold: 1e-4,
        }
    }
}

impl PlateauPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.factor > 0.0 && self.factor < 1.0) {
            return Err(Error::Config(format!("plateau factor {} outside (0, 1)", self.factor)));
        }
        if self.patience == 0 {
            return Err(Error::Config("plateau patience must be ≥ 1".into()));
        }
        if !(self.floor > 0.0) || !(self.threshold >= 0.0) {
            return Err(Error::Config("plateau floor must be positive".into()));
        }
        Ok(())
    }
}

/// Running state of a plateau policy over a minimized metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauTracker {
    pub best: Option<f64>,
    pub wait: usize,
}

impl PlateauTracker {
    pub fn new() -> Self {
        PlateauTracker { best: None, wait: 0 }
    }

    /// Records one epoch's metric; returns true when the rate should drop.
    pub fn observe(&mut self, policy: &PlateauPolicy, metric: f64) -> bool {
        match self.best {
            Some(best) if !(metric < best - policy.threshold) => {
                self.wait += 1;
                if self.wait >= policy.patience {
                    self.wait = 0;
                    return true;
                }
                false
            }
            _ => {
                self.best = Some(metric);
                self.wait = 0;
                false
            }
        }
    }

    /// Observes `metric` and returns the (possibly reduced) learning rate.
    pub fn update(&mut self, policy: &PlateauPolicy, metric: f64, lr: f64) -> f64 {
        if self.observe(policy, metric) && lr > policy.floor {
            (lr * policy.factor).max(policy.floor)
        } else {
            lr
        }
    }
}

impl Default for PlateauTracker {
    fn default() -> Self {
        Self::new()
    }
}

/// Learning rate after the last epoch of `history`: the whole history is
/// replayed through the policy, and `current_lr` is reduced only if the final
/// epoch triggers a reduction.
pub fn plateau_update(policy: &PlateauPolicy, history: &[f64], current_lr: f64) -> f64 {
    let Some((&last, earlier)) = history.split_last() else {
        return current_lr;
    };
    let mut tracker = PlateauTracker::new();
    for &m in earlier {
        tracker.observe(policy, m);
    }
    tracker.update(policy, last, current_lr)
}
