//! Model definitions and the parameter registry.

pub mod checkpoint;
mod linear;
mod params;
mod resnet;

pub use linear::LinearClassifier;
pub use params::{ParamEntry, ParamSet};
pub use resnet::{conv_bn_act, residual_block, ConvBnVars, ResNet9};

use serde::{Deserialize, Serialize};

use crate::element::Element;
use crate::error::{Error, Result};
use crate::tensor::{BatchNormState, BnMode, Tape, Var};

/// Number of fixed whitening filters: one per dimension of a 3x3x3 patch.
pub const WHITENING_FILTERS: usize = 27;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Celu { alpha: f64 },
}

impl Activation {
    pub fn apply<T: Element>(self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        match self {
            Activation::Relu => Ok(tape.relu(x)),
            Activation::Celu { alpha } => tape.celu(x, alpha),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Stem {
    Plain,
    /// Frozen `[27, 3, 3, 3]` patch-whitening filters followed by a trainable
    /// 1x1 convolution to `expand_to` channels.
    Whitened {
        filters: Vec<f64>,
        expand_to: usize,
    },
}

/// Architecture description for [`ResNet9`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub widths: [usize; 4],
    pub activation: Activation,
    pub stem: Stem,
    pub classes: usize,
    pub head_scale: f64,
    pub in_channels: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            widths: [64, 128, 256, 512],
            activation: Activation::Relu,
            stem: Stem::Plain,
            classes: 10,
            head_scale: 0.125,
            in_channels: 3,
        }
    }
}

impl ModelSpec {
    pub const CELU_ALPHA: f64 = 0.3;

    /// Divides every channel width (and the whitened expansion) by `divisor`.
    pub fn narrowed(mut self, divisor: usize) -> Self {
        let d = divisor.max(1);
        self.widths = self.widths.map(|w| (w / d).max(1));
        if let Stem::Whitened { expand_to, .. } = &mut self.stem {
            *expand_to = (*expand_to / d).max(1);
        }
        self
    }

    pub fn with_celu(mut self) -> Self {
        self.activation = Activation::Celu {
            alpha: Self::CELU_ALPHA,
        };
        self
    }

    /// Switches to a whitened stem that expands to the trunk's first width.
    pub fn with_whitening(mut self, filters: Vec<f64>) -> Self {
        self.stem = Stem::Whitened {
            filters,
            expand_to: self.widths[0],
        };
        self
    }

    /// Width of the first trunk layer's output.
    pub fn prep_width(&self) -> usize {
        match &self.stem {
            Stem::Plain => self.widths[0],
            Stem::Whitened { expand_to, .. } => *expand_to,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.classes)));
        }
        if self.widths.contains(&0) || self.in_channels == 0 {
            return Err(Error::Config("channel widths must be positive".into()));
        }
        if !self.head_scale.is_finite() {
            return Err(Error::Config("head_scale must be finite".into()));
        }
        if let Activation::Celu { alpha } = self.activation {
            if alpha.is_nan() || alpha <= 0.0 {
                return Err(Error::Config(format!("celu alpha must be positive, got {alpha}")));
            }
        }
        if let Stem::Whitened { filters, expand_to } = &self.stem {
            if self.in_channels != 3 {
                return Err(Error::Config(format!(
                    "whitened stem needs 3-channel input, spec has {}",
                    self.in_channels
                )));
            }
            if filters.len() != WHITENING_FILTERS * 27 {
                return Err(Error::Config(format!(
                    "whitening filters must be [27,3,3,3], got {} values",
                    filters.len()
                )));
            }
            if *expand_to == 0 {
                return Err(Error::Config("whitened stem expand_to must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Anything the training loops can drive.
pub trait Network<T: Element>: Clone {
    fn params(&self) -> &ParamSet<T>;
    fn params_mut(&mut self) -> &mut ParamSet<T>;

    /// Records the forward pass; returns `[N, classes]` logits.
    fn forward(&mut self, tape: &mut Tape<T>, x: Var, mode: BnMode) -> Result<Var>;

    fn batchnorm_states_mut(&mut self) -> Vec<&mut BatchNormState<T>> {
        Vec::new()
    }

    fn classes(&self) -> usize;
}
