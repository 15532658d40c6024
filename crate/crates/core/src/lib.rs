//! A small CPU training engine: tape-based reverse-mode autodiff, ResNet-9,
//! SGD/SAM with gradient centralization, input-patch whitening, two-task
//! meta-training and a wall-clock-budgeted experiment harness.

pub mod budget;
pub mod data;
pub mod element;
pub mod error;
pub mod harness;
pub mod mltp;
pub mod nn;
pub mod optim;
pub mod tensor;
pub mod train;

pub use element::Element;
pub use error::{Error, Result};
pub use nn::{ModelSpec, Network, ParamSet, ResNet9};
pub use tensor::{Tape, Tensor, Var};
