use super::Op;
use crate::element::Element;
use crate::error::{Error, Result};
use crate::tensor::tape::{Node, Tape, Var};

/// Running statistics of one batch-norm layer.
///
/// Updates follow `running = (1 - momentum) * running + momentum * batch`, with
/// the biased batch variance, so `momentum = 1` copies the last batch exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState<T> {
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: f64,
    pub eps: f64,
}

impl<T: Element> BatchNormState<T> {
    pub const DEFAULT_MOMENTUM: f64 = 0.1;
    pub const DEFAULT_EPS: f64 = 1e-5;

    pub fn new(channels: usize) -> Self {
        BatchNormState {
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: Self::DEFAULT_MOMENTUM,
            eps: Self::DEFAULT_EPS,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    pub fn reset(&mut self) {
        self.running_mean.fill(T::zero());
        self.running_var.fill(T::one());
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Normalize with batch statistics; optionally fold them into the running state.
    Train { update_stats: bool },
    /// Normalize with the running statistics.
    Eval,
}

impl<T: Element> Tape<T> {
    pub fn batchnorm2d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        state: &mut BatchNormState<T>,
        mode: BnMode,
    ) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(Error::shape("batchnorm2d", format!("expected 4-d input, got {s:?}")));
        }
        let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
        if self.shape(gamma) != [c] || self.shape(beta) != [c] || state.channels() != c {
            return Err(Error::shape(
                "batchnorm2d",
                format!("affine/state size does not match {c} channels"),
            ));
        }
        let count = (n * hw) as f64;
        let xv = self.value(x);
        let (mean, var): (Vec<f64>, Vec<f64>) = match mode {
            BnMode::Train { .. } => (0..c)
                .map(|ch| {
                    let plane = |i: usize| &xv[(i * c + ch) * hw..(i * c + ch + 1) * hw];
                    let sum: f64 = (0..n).flat_map(|i| plane(i).iter()).map(|v| v.as_f64()).sum();
                    let mean = sum / count;
                    let sq: f64 = (0..n)
                        .flat_map(|i| plane(i).iter())
                        .map(|v| (v.as_f64() - mean).powi(2))
                        .sum();
                    (mean, sq / count)
                })
                .unzip(),
            BnMode::Eval => (
                state.running_mean.iter().map(|v| v.as_f64()).collect(),
                state.running_var.iter().map(|v| v.as_f64()).collect(),
            ),
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::of(1.0 / (v + state.eps).sqrt())).collect();
        let mean_t: Vec<T> = mean.iter().map(|&m| T::of(m)).collect();
        let gv = self.value(gamma);
        let bv = self.value(beta);
        let mut xhat = vec![T::zero(); xv.len()];
        let mut out = vec![T::zero(); xv.len()];
        for i in 0..n {
            for ch in 0..c {
                let range = (i * c + ch) * hw..(i * c + ch + 1) * hw;
                for idx in range {
                    let h = (xv[idx] - mean_t[ch]) * inv_std[ch];
                    xhat[idx] = h;
                    out[idx] = gv[ch] * h + bv[ch];
                }
            }
        }
        let batch_stats = matches!(mode, BnMode::Train { .. });
        if let BnMode::Train { update_stats: true } = mode {
            let m = state.momentum;
            for ch in 0..c {
                let rm = state.running_mean[ch].as_f64();
                let rv = state.running_var[ch].as_f64();
                state.running_mean[ch] = T::of((1.0 - m) * rm + m * mean[ch]);
                state.running_var[ch] = T::of((1.0 - m) * rv + m * var[ch]);
            }
        }
        Ok(self.push(
            s,
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
        ))
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn backward<T: Element>(
    nodes: &[Node<T>],
    dy: &[T],
    x: Var,
    gamma: Var,
    beta: Var,
    xhat: &[T],
    inv_std: &[T],
    batch_stats: bool,
) -> Vec<(Var, Vec<T>)> {
    let s = &nodes[x.0].shape;
    let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
    let gv = &nodes[gamma.0].value;
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for i in 0..n {
        for ch in 0..c {
            let range = (i * c + ch) * hw..(i * c + ch + 1) * hw;
            for idx in range {
                dgamma[ch] = dgamma[ch] + dy[idx] * xhat[idx];
                dbeta[ch] = dbeta[ch] + dy[idx];
            }
        }
    }
    let mut grads = Vec::with_capacity(3);
    if nodes[x.0].needs_grad {
        let mut dx = vec![T::zero(); dy.len()];
        let count = T::of((n * hw) as f64);
        for i in 0..n {
            for ch in 0..c {
                let range = (i * c + ch) * hw..(i * c + ch + 1) * hw;
                if batch_stats {
                    // dxhat = dy * gamma; sums over the channel are dbeta * gamma
                    // and dgamma * gamma.
                    let k = gv[ch] * inv_std[ch] / count;
                    for idx in range {
                        dx[idx] = k * (count * dy[idx] - dbeta[ch] - xhat[idx] * dgamma[ch]);
                    }
                } else {
                    let k = gv[ch] * inv_std[ch];
                    for idx in range {
                        dx[idx] = k * dy[idx];
                    }
                }
            }
        }
        grads.push((x, dx));
    }
    grads.push((gamma, dgamma));
    grads.push((beta, dbeta));
    grads
}
