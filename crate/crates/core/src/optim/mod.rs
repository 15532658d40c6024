//! SGD with momentum and coupled weight decay, gradient centralization,
//! the SAM two-pass wrapper, and learning-rate schedules.

mod gc;
mod sam;
mod schedule;
mod sgd;

pub use gc::centralize_gradients;
pub use sam::{sam_step, SamPass};
pub use schedule::schedule_lr;
pub use sgd::sgd_step;

use serde::{Deserialize, Serialize};

use crate::element::Element;
use crate::error::{Error, Result};
use crate::nn::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Schedule {
    /// Linear ramp from 0 to the peak over `warmup_fraction` of the steps,
    /// then linear decay to 0 at the last step.
    OneCycle {
        warmup_fraction: f64,
    },
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptConfig {
    pub lr_peak: f64,
    pub momentum: f64,
    /// Coefficient of the `lambda * w·w` penalty; enters the gradient as `2 * lambda * w`.
    pub weight_decay: f64,
    /// SAM neighbourhood radius.
    pub rho: f64,
    pub gc_enabled: bool,
    pub sam_enabled: bool,
    pub schedule: Schedule,
    pub total_steps: usize,
}

impl Default for OptConfig {
    fn default() -> Self {
        OptConfig {
            lr_peak: 0.4,
            momentum: 0.9,
            weight_decay: 0.0,
            rho: 0.05,
            gc_enabled: false,
            sam_enabled: false,
            schedule: Schedule::OneCycle { warmup_fraction: 0.2 },
            total_steps: 1,
        }
    }
}

impl OptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr_peak.is_nan() || self.lr_peak <= 0.0 {
            return Err(Error::Config(format!("lr_peak must be positive, got {}", self.lr_peak)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.rho.is_nan() || self.rho < 0.0 || self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return Err(Error::Config("rho and weight decay must be non-negative".into()));
        }
        if self.total_steps == 0 {
            return Err(Error::Config("total_steps must be at least 1".into()));
        }
        if let Schedule::OneCycle { warmup_fraction } = self.schedule {
            if !(0.0..=1.0).contains(&warmup_fraction) {
                return Err(Error::Config(format!(
                    "warmup fraction must be in [0, 1], got {warmup_fraction}"
                )));
            }
        }
        Ok(())
    }
}

/// Per-parameter optimizer buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState<T> {
    pub velocity: Vec<Vec<T>>,
    /// Last SAM ascent vector; allocated only when SAM is enabled.
    pub sam_perturbation: Option<Vec<Vec<T>>>,
    pub step_index: usize,
}

impl<T: Element> OptState<T> {
    pub fn new(params: &ParamSet<T>, cfg: &OptConfig) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|e| vec![T::zero(); e.tensor.len()])
                .collect::<Vec<_>>()
        };
        OptState {
            velocity: zeros(),
            sam_perturbation: cfg.sam_enabled.then(zeros),
            step_index: 0,
        }
    }

    pub(crate) fn check_layout(&self, params: &ParamSet<T>) -> Result<()> {
        let ok = self.velocity.len() == params.len()
            && self
                .velocity
                .iter()
                .zip(params.iter())
                .all(|(v, e)| v.len() == e.tensor.len());
        if ok {
            Ok(())
        } else {
            Err(Error::shape(
                "optimizer",
                "state buffers do not match the parameter set",
            ))
        }
    }
}
