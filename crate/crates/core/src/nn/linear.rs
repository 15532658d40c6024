use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Network, ParamSet};
use crate::element::Element;
use crate::error::{Error, Result};
use crate::tensor::{BnMode, Tape, Tensor, Var};

/// Softmax regression on flattened inputs. Small enough to reason about by
/// hand, which makes it the fixture model for optimizer and meta-training tests.
#[derive(Debug, Clone)]
pub struct LinearClassifier<T> {
    params: ParamSet<T>,
    in_dim: usize,
    classes: usize,
}

impl<T: Element> LinearClassifier<T> {
    pub fn new(in_dim: usize, classes: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, (1.0 / in_dim as f64).sqrt()).expect("positive std");
        let w: Vec<f64> = (0..classes * in_dim).map(|_| normal.sample(&mut rng)).collect();
        Self::from_weights(Tensor::from_f64(&[classes, in_dim], &w)?, Tensor::zeros(&[classes]))
    }

    pub fn from_weights(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let s = weight.shape().to_vec();
        if s.len() != 2 || bias.shape() != [s[0]] {
            return Err(Error::shape("linear classifier", format!("{s:?} / {:?}", bias.shape())));
        }
        let mut params = ParamSet::new();
        params.register("weight", weight)?;
        params.register("bias", bias)?;
        Ok(LinearClassifier {
            params,
            in_dim: s[1],
            classes: s[0],
        })
    }
}

impl<T: Element> Network<T> for LinearClassifier<T> {
    fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    fn forward(&mut self, tape: &mut Tape<T>, x: Var, _mode: BnMode) -> Result<Var> {
        let n = tape.shape(x)[0];
        let x = tape.reshape(x, &[n, self.in_dim])?;
        let w = self.params.bind(tape, 0);
        let b = self.params.bind(tape, 1);
        tape.linear(x, w, Some(b))
    }

    fn classes(&self) -> usize {
        self.classes
    }
}
