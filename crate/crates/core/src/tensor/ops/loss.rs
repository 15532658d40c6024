use super::Op;
use crate::element::Element;
use crate::error::{Error, Result};
use crate::tensor::tape::{Tape, Var};

/// Label-smoothed targets `(1 - alpha) * one_hot + alpha / classes`, row-major `[N, classes]`.
pub fn smoothed_targets<T: Element>(labels: &[usize], alpha: f64, classes: usize) -> Result<Vec<T>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("label smoothing must be in [0, 1], got {alpha}")));
    }
    if classes < 2 {
        return Err(Error::Config(format!("need at least 2 classes, got {classes}")));
    }
    let off = T::of(alpha / classes as f64);
    let on = T::of(1.0 - alpha + alpha / classes as f64);
    let mut targets = vec![off; labels.len() * classes];
    for (i, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(Error::LabelOutOfRange {
                index: i,
                label,
                classes,
            });
        }
        targets[i * classes + label] = on;
    }
    Ok(targets)
}

impl<T: Element> Tape<T> {
    /// Mean over the batch of `-Σ_k target_k log softmax(logits)_k`.
    ///
    /// Returns the scalar loss and the smoothed target rows.
    pub fn smoothed_cross_entropy(&mut self, logits: Var, labels: &[usize], alpha: f64) -> Result<(Var, Vec<T>)> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(Error::shape(
                "smoothed_cross_entropy",
                format!("logits {s:?} vs {} labels", labels.len()),
            ));
        }
        let (n, k) = (s[0], s[1]);
        let targets = smoothed_targets::<T>(labels, alpha, k)?;
        let mut probs = vec![T::zero(); n * k];
        let mut total = 0.0f64;
        for ((row, p), t) in self
            .value(logits)
            .chunks_exact(k)
            .zip(probs.chunks_exact_mut(k))
            .zip(targets.chunks_exact(k))
        {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let denom: T = row.iter().map(|&z| (z - max).exp()).sum();
            let log_denom = denom.ln();
            for j in 0..k {
                let logp = row[j] - max - log_denom;
                p[j] = logp.exp();
                total -= t[j].as_f64() * logp.as_f64();
            }
        }
        let loss = T::of(total / n as f64);
        let v = self.push(
            vec![1],
            vec![loss],
            Op::CrossEntropy {
                logits,
                probs,
                targets: targets.clone(),
            },
        );
        Ok((v, targets))
    }
}
