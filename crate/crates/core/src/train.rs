//! One optimizer step and one pass over a dataset, shared by plain and
//! meta training.

use crate::data::{augment_batch, batch_indices, epoch_seed, Augmenter, NormalizedSet};
use crate::element::Element;
use crate::error::{Error, Result};
use crate::nn::{Network, ParamSet};
use crate::optim::{centralize_gradients, sam_step, schedule_lr, sgd_step, OptConfig, OptState, SamPass};
use crate::tensor::{BnMode, Tape, Tensor};

/// Forward, smoothed cross-entropy and backward; leaves the gradients in the
/// model's parameters (previous gradients are cleared).
pub fn loss_and_grad<T: Element, N: Network<T>>(
    model: &mut N,
    x: &Tensor<T>,
    labels: &[usize],
    smoothing: f64,
    mode: BnMode,
) -> Result<f64> {
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let logits = model.forward(&mut tape, xv, mode)?;
    let (loss, _) = tape.smoothed_cross_entropy(logits, labels, smoothing)?;
    let value = tape.scalar(loss).as_f64();
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("training loss is {value}")));
    }
    tape.backward(loss)?;
    let params = model.params_mut();
    params.zero_grads();
    params.collect_grads(&tape)?;
    // parameters that did not reach the loss still need a (zero) gradient
    for e in params.entries_mut() {
        if e.tensor.grad().is_none() {
            e.tensor.grad = Some(vec![T::zero(); e.tensor.len()]);
        }
    }
    Ok(value)
}

/// Logits of `x` in evaluation mode.
pub fn predict<T: Element, N: Network<T>>(model: &mut N, x: &Tensor<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let logits = model.forward(&mut tape, xv, BnMode::Eval)?;
    Ok(tape.tensor(logits))
}

/// One update of `model` on a batch. With SAM enabled the perturbed pass does
/// not touch batchnorm running statistics. Returns the loss at the current
/// weights.
pub fn train_step<T: Element, N: Network<T>>(
    model: &mut N,
    state: &mut OptState<T>,
    cfg: &OptConfig,
    lr: f64,
    x: &Tensor<T>,
    labels: &[usize],
    smoothing: f64,
) -> Result<f64> {
    if !cfg.sam_enabled {
        let loss = loss_and_grad(model, x, labels, smoothing, BnMode::Train { update_stats: true })?;
        if cfg.gc_enabled {
            centralize_gradients(model.params_mut())?;
        }
        sgd_step(model.params_mut(), state, lr, cfg)?;
        return Ok(loss);
    }

    let mut params = std::mem::take(model.params_mut());
    let result = sam_step(&mut params, state, lr, cfg, |p: &mut ParamSet<T>, pass| {
        std::mem::swap(model.params_mut(), p);
        let mode = BnMode::Train {
            update_stats: pass == SamPass::Clean,
        };
        let r = loss_and_grad(model, x, labels, smoothing, mode);
        std::mem::swap(model.params_mut(), p);
        r
    });
    *model.params_mut() = params;
    result.map(|(clean, _)| clean)
}

/// How one pass over a training set draws its batches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochPlan {
    pub batch_size: usize,
    pub shuffle: bool,
    pub augment: bool,
    pub smoothing: f64,
    pub seed: u64,
}

/// Summary of one pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub mean_loss: f64,
    pub steps: usize,
    pub last_lr: f64,
}

/// Gathers (and optionally augments) the batch for `indices`.
pub fn prepare_batch<T: Element>(
    set: &NormalizedSet<T>,
    indices: &[usize],
    augmenter: Option<&mut Augmenter>,
) -> Result<(Tensor<T>, Vec<usize>)> {
    let (mut x, labels) = set.batch(indices)?;
    if let Some(aug) = augmenter {
        augment_batch(&mut x, aug);
    }
    Ok((x, labels))
}

/// One pass over `set`. The learning rate follows `cfg`'s schedule at the
/// state's step counter.
pub fn train_epoch<T: Element, N: Network<T>>(
    model: &mut N,
    state: &mut OptState<T>,
    cfg: &OptConfig,
    set: &NormalizedSet<T>,
    plan: &EpochPlan,
    epoch: u64,
) -> Result<EpochStats> {
    if set.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let mut aug = plan.augment.then(|| Augmenter::for_epoch(plan.seed, epoch));
    let mut total = 0.0;
    let mut steps = 0;
    let mut last_lr = 0.0;
    for indices in batch_indices(set.len(), plan.batch_size, plan.shuffle, epoch_seed(plan.seed, epoch)) {
        let (x, labels) = prepare_batch(set, &indices, aug.as_mut())?;
        last_lr = schedule_lr(cfg, state.step_index);
        total += train_step(model, state, cfg, last_lr, &x, &labels, plan.smoothing)?;
        steps += 1;
    }
    Ok(EpochStats {
        mean_loss: total / steps as f64,
        steps,
        last_lr,
    })
}
