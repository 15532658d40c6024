//! Two-task meta-training: adapt a copy of the shared weights on each task,
//! then move the shared weights toward the mean of the adapted ones.

use std::fs;
use std::io::Write;
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::budget::Budget;
use crate::data::{batch_indices, epoch_seed, Augmenter, Dataset, NormalizedSet, CLASSES};
use crate::element::Element;
use crate::error::{Error, Result};
use crate::nn::{Network, ParamSet};
use crate::optim::{schedule_lr, OptConfig, OptState};
use crate::tensor::{BnMode, Tape};
use crate::train::{prepare_batch, train_step};

/// Class-balanced, disjoint task datasets.
#[derive(Debug, Clone)]
pub struct TaskSplit {
    pub tasks: Vec<Dataset>,
    pub per_class_per_task: usize,
    pub seed: u64,
}

impl TaskSplit {
    /// The degenerate one-task split.
    pub fn single(ds: &Dataset) -> Self {
        TaskSplit {
            per_class_per_task: ds.class_counts().into_iter().min().unwrap_or(0),
            tasks: vec![ds.clone()],
            seed: 0,
        }
    }

    pub fn normalized<T: Element>(&self, stats: &crate::data::ChannelStats) -> Vec<NormalizedSet<T>> {
        self.tasks.iter().map(|t| NormalizedSet::new(t, stats)).collect()
    }
}

/// Splits every class in half (seeded). An odd sample out is dropped with a
/// warning.
pub fn split_tasks(ds: &Dataset, seed: u64) -> Result<TaskSplit> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); CLASSES];
    for i in 0..ds.len() {
        by_class[ds.label(i)].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut halves = [Vec::new(), Vec::new()];
    let mut per_task = usize::MAX;
    for (class, members) in by_class.iter_mut().enumerate() {
        if members.len() < 2 {
            return Err(Error::Data(format!(
                "class {class} has {} samples; each task needs at least one",
                members.len()
            )));
        }
        if members.len() % 2 == 1 {
            warn!(
                "class {class} has an odd count ({}); dropping one sample",
                members.len()
            );
        }
        members.shuffle(&mut rng);
        let half = members.len() / 2;
        per_task = per_task.min(half);
        halves[0].extend_from_slice(&members[..half]);
        halves[1].extend_from_slice(&members[half..2 * half]);
    }
    for h in &mut halves {
        h.shuffle(&mut rng);
    }
    Ok(TaskSplit {
        tasks: halves.iter().map(|h| ds.select(h)).collect(),
        per_class_per_task: per_task,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MltpConfig {
    /// Updates per inner loop; `None` means one pass over the task.
    pub inner_steps: Option<usize>,
    /// Fixed inner learning rate; `None` follows the inner optimizer's schedule.
    pub inner_lr: Option<f64>,
    /// Outer interpolation rate.
    pub beta: f64,
    pub meta_iterations: usize,
    pub inner_optimizer: OptConfig,
    pub batch_size: usize,
    pub shuffle: bool,
    pub augment: bool,
    pub smoothing: f64,
    pub seed: u64,
}

impl Default for MltpConfig {
    fn default() -> Self {
        MltpConfig {
            inner_steps: None,
            inner_lr: None,
            beta: 0.5,
            meta_iterations: 1,
            inner_optimizer: OptConfig::default(),
            batch_size: 256,
            shuffle: true,
            augment: true,
            smoothing: 0.0,
            seed: 0,
        }
    }
}

impl MltpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.inner_steps == Some(0) {
            return Err(Error::Config("inner_steps must be at least 1".into()));
        }
        if self.meta_iterations == 0 {
            return Err(Error::Config("meta_iterations must be at least 1".into()));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::Config(format!("beta must be in (0, 1], got {}", self.beta)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        self.inner_optimizer.validate()
    }

    /// Inner updates per round for a task of `len` samples.
    pub fn steps_for(&self, len: usize) -> usize {
        self.inner_steps.unwrap_or_else(|| len.div_ceil(self.batch_size))
    }
}

/// Result of adapting one snapshot to one task.
#[derive(Debug, Clone)]
pub struct Adapted<T> {
    pub params: ParamSet<T>,
    pub mean_loss: f64,
    pub last_lr: f64,
}

/// Trains a deep copy of `snapshot` on `task` with fresh optimizer state.
/// `step_offset` positions the inner schedule; `stream` seeds batch order and
/// augmentation.
pub fn inner_loop<T: Element, N: Network<T>>(
    snapshot: &N,
    task: &NormalizedSet<T>,
    cfg: &MltpConfig,
    step_offset: usize,
    stream: u64,
) -> Result<Adapted<T>> {
    if task.is_empty() {
        return Err(Error::Data("task is empty".into()));
    }
    let mut model = snapshot.clone();
    let opt = &cfg.inner_optimizer;
    let mut state = OptState::new(model.params(), opt);
    let steps = cfg.steps_for(task.len());
    let mut done = 0;
    let mut total = 0.0;
    let mut last_lr = 0.0;
    let mut pass = 0u64;
    while done < steps {
        let mut aug = cfg.augment.then(|| Augmenter::for_epoch(stream, pass));
        for indices in batch_indices(task.len(), cfg.batch_size, cfg.shuffle, epoch_seed(stream, pass)) {
            if done == steps {
                break;
            }
            let (x, labels) = prepare_batch(task, &indices, aug.as_mut())?;
            last_lr = cfg.inner_lr.unwrap_or_else(|| schedule_lr(opt, step_offset + done));
            total += train_step(&mut model, &mut state, opt, last_lr, &x, &labels, cfg.smoothing)?;
            done += 1;
        }
        pass += 1;
    }
    let mut params = std::mem::take(model.params_mut());
    params.zero_grads();
    Ok(Adapted {
        params,
        mean_loss: total / steps as f64,
        last_lr,
    })
}

/// `w ← (1 − β)·w + β·mean_t(w_t)` over every trainable parameter, which is
/// `w + β·mean_t(w_t − w)` evaluated so that `β = 1` lands exactly on the mean.
pub fn meta_update<T: Element>(shared: &mut ParamSet<T>, adapted: &[&ParamSet<T>], beta: f64) -> Result<()> {
    if adapted.is_empty() {
        return Err(Error::Config("meta_update needs at least one adapted set".into()));
    }
    if let Some(bad) = adapted.iter().position(|a| !a.same_layout(shared)) {
        return Err(Error::shape(
            "meta_update",
            format!("adapted set {bad} does not match the shared layout"),
        ));
    }
    let count = adapted.len() as f64;
    for (k, e) in shared.entries_mut().iter_mut().enumerate() {
        let w = e.tensor.data_mut();
        for (i, wi) in w.iter_mut().enumerate() {
            let mean = adapted.iter().map(|a| a.tensor(k).data()[i].as_f64()).sum::<f64>() / count;
            *wi = T::of((1.0 - beta) * wi.as_f64() + beta * mean);
        }
    }
    Ok(())
}

/// L2 distance between two parameter sets of the same layout.
pub fn delta_norm<T: Element>(a: &ParamSet<T>, b: &ParamSet<T>) -> f64 {
    a.iter()
        .zip(b.iter())
        .flat_map(|(x, y)| x.tensor.data().iter().zip(y.tensor.data()))
        .map(|(x, y)| (x.as_f64() - y.as_f64()).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Recomputes batchnorm running statistics with one pass over `set`, using
/// an equal-weight running average of the batch statistics.
pub fn recalibrate_batchnorm<T: Element, N: Network<T>>(
    model: &mut N,
    set: &NormalizedSet<T>,
    batch_size: usize,
) -> Result<()> {
    let saved: Vec<f64> = model.batchnorm_states_mut().iter().map(|s| s.momentum).collect();
    if saved.is_empty() {
        return Ok(());
    }
    model.batchnorm_states_mut().into_iter().for_each(|s| s.reset());
    for (k, indices) in batch_indices(set.len(), batch_size, false, 0).enumerate() {
        let m = 1.0 / (k + 1) as f64;
        model.batchnorm_states_mut().into_iter().for_each(|s| s.momentum = m);
        let (x, _) = set.batch(&indices)?;
        let mut tape = Tape::new();
        let xv = tape.constant(&x);
        model.forward(&mut tape, xv, BnMode::Train { update_stats: true })?;
    }
    for (s, m) in model.batchnorm_states_mut().into_iter().zip(saved) {
        s.momentum = m;
    }
    Ok(())
}

/// One completed meta-round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub task_losses: Vec<f64>,
    pub delta_norms: Vec<f64>,
    pub lr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MltpStop {
    Completed,
    /// The next round was not started because it would not fit.
    BudgetBeforeRound,
    /// The budget ran out inside a round; that round was discarded.
    RolledBack,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MltpOutcome {
    pub history: Vec<RoundRecord>,
    pub stop: MltpStop,
}

/// Runs up to `cfg.meta_iterations` rounds. Before each round the budget must
/// admit `max(first_estimate, longest round so far)`; if it runs out during a
/// round the shared weights stay at the last round boundary. After every
/// completed round batchnorm statistics are recalibrated on `full` and
/// `on_round` is called (typically to evaluate and log).
pub fn mltp_train<T, N, F>(
    model: &mut N,
    tasks: &[NormalizedSet<T>],
    full: &NormalizedSet<T>,
    cfg: &MltpConfig,
    budget: &Budget<'_>,
    first_estimate: f64,
    mut on_round: F,
) -> Result<MltpOutcome>
where
    T: Element,
    N: Network<T>,
    F: FnMut(&mut N, &RoundRecord) -> Result<()>,
{
    cfg.validate()?;
    if tasks.is_empty() {
        return Err(Error::Config("mltp needs at least one task".into()));
    }
    let steps_per_round = tasks.iter().map(|t| cfg.steps_for(t.len())).max().unwrap_or(1);
    let mut history = Vec::new();
    let mut longest = first_estimate;
    for round in 0..cfg.meta_iterations {
        if !budget.fits(longest) {
            return Ok(MltpOutcome {
                history,
                stop: MltpStop::BudgetBeforeRound,
            });
        }
        let started = budget.elapsed();
        let mut adapted = Vec::with_capacity(tasks.len());
        for (t, task) in tasks.iter().enumerate() {
            let stream = epoch_seed(cfg.seed ^ (0x5EED_0000 + t as u64), round as u64);
            adapted.push(inner_loop(model, task, cfg, round * steps_per_round, stream)?);
            if budget.exhausted() {
                return Ok(MltpOutcome {
                    history,
                    stop: MltpStop::RolledBack,
                });
            }
        }
        let record = RoundRecord {
            round: round + 1,
            task_losses: adapted.iter().map(|a| a.mean_loss).collect(),
            delta_norms: adapted.iter().map(|a| delta_norm(&a.params, model.params())).collect(),
            lr: adapted.last().map_or(0.0, |a| a.last_lr),
        };
        let refs: Vec<&ParamSet<T>> = adapted.iter().map(|a| &a.params).collect();
        meta_update(model.params_mut(), &refs, cfg.beta)?;
        recalibrate_batchnorm(model, full, cfg.batch_size)?;
        on_round(model, &record)?;
        history.push(record);
        longest = longest.max(budget.elapsed() - started);
    }
    Ok(MltpOutcome {
        history,
        stop: MltpStop::Completed,
    })
}

/// Writes the per-round history as CSV.
pub fn write_history(path: &Path, history: &[RoundRecord]) -> Result<()> {
    let tasks = history.first().map_or(0, |r| r.task_losses.len());
    let mut out = Vec::new();
    write!(out, "round,lr")?;
    for t in 0..tasks {
        write!(out, ",task{t}_loss,task{t}_delta_norm")?;
    }
    writeln!(out)?;
    for r in history {
        write!(out, "{},{:.6}", r.round, r.lr)?;
        for (l, d) in r.task_losses.iter().zip(&r.delta_norms) {
            write!(out, ",{l:.6},{d:.6}")?;
        }
        writeln!(out)?;
    }
    fs::write(path, out).map_err(|e| Error::at_path(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Split, PIXELS};
    use crate::tensor::Tensor;

    fn balanced(per_class: usize) -> Dataset {
        let m = per_class * CLASSES;
        Dataset {
            images: (0..m * PIXELS).map(|i| (i % 251) as u8).collect(),
            labels: (0..m).map(|i| (i % CLASSES) as u8).collect(),
            split: Split::Train,
            source_digest: String::new(),
        }
    }

    fn scalar_set(w: f64) -> ParamSet<f64> {
        let mut p = ParamSet::new();
        p.register("w", Tensor::scalar(w)).unwrap();
        p
    }

    #[test]
    fn twenty_sample_split() {
        let s = split_tasks(&balanced(2), 3).unwrap();
        assert_eq!(s.tasks.len(), 2);
        assert_eq!(s.per_class_per_task, 1);
        for t in &s.tasks {
            assert_eq!(t.len(), 10);
            assert_eq!(t.class_counts(), [1; 10]);
        }
    }

    #[test]
    fn singleton_class_rejected() {
        let mut ds = balanced(2);
        ds.labels[0] = 1; // class 0 now has one sample
        let err = split_tasks(&ds, 0).unwrap_err().to_string();
        assert!(err.contains("class 0"), "{err}");
    }

    #[test]
    fn meta_update_examples() {
        let mut w = scalar_set(0.0);
        let (a, b) = (scalar_set(2.0), scalar_set(4.0));
        meta_update(&mut w, &[&a, &b], 0.5).unwrap();
        assert_eq!(w.tensor(0).data()[0], 1.5);

        let mut w = scalar_set(0.7);
        meta_update(&mut w, &[&a, &b], 0.0).unwrap();
        assert_eq!(w.tensor(0).data()[0], 0.7);

        let mut w = scalar_set(0.7);
        meta_update(&mut w, &[&a, &a], 1.0).unwrap();
        assert_eq!(w.tensor(0).data()[0], 2.0);
    }

    #[test]
    fn meta_update_rejects_mismatch() {
        let mut w = scalar_set(0.0);
        let mut other = ParamSet::new();
        other.register("v", Tensor::<f64>::scalar(1.0)).unwrap();
        assert!(matches!(meta_update(&mut w, &[&other], 0.5), Err(Error::Shape { .. })));
    }

    #[test]
    fn history_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.csv");
        let r = RoundRecord {
            round: 1,
            task_losses: vec![1.0, 2.0],
            delta_norms: vec![0.5, 0.25],
            lr: 0.1,
        };
        write_history(&p, &[r]).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(
            text,
            "round,lr,task0_loss,task0_delta_norm,task1_loss,task1_delta_norm\n1,0.100000,1.000000,0.500000,2.000000,0.250000\n"
        );
    }
}
