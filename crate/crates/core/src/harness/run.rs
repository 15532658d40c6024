use std::path::{Path, PathBuf};

use log::{error, info, warn};
use sha2::{Digest, Sha256};

use super::config::{ConfigSources, Precision, Recipe, RunConfig};
use super::metrics::{
    checkpoint_path, history_path, preflight, write_metrics, Manifest, MetricsRecord, Seeds, StopReason,
    WhiteningSummary,
};
use crate::budget::{Budget, Clock};
use crate::data::{
    batch_indices, fit_whitening, load_cifar_binary, sample_subset, test_paths, train_paths, ChannelStats,
    NormalizedSet, Split, WhiteningFilters,
};
use crate::element::Element;
use crate::error::{Error, Result};
use crate::mltp::{mltp_train, split_tasks, write_history, MltpConfig};
use crate::nn::{checkpoint, Network, ParamSet, ResNet9};
use crate::optim::OptState;
use crate::train::{predict, train_epoch, EpochPlan};

const TEST_SALT: u64 = 0x7E57_5EED;
const AUG_SALT: u64 = 0xA0A0_0001;
const WHITEN_SALT: u64 = 0x3417_E000;
const TASK_SALT: u64 = 0x7A5C_0002;

/// Index of the largest entry; ties go to the lowest index and NaN never wins.
pub fn argmax_lowest<T: Element>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] || (row[best].is_nan() && !v.is_nan()) {
            best = i;
        }
    }
    best
}

/// Top-1 accuracy in percent, in evaluation mode.
pub fn evaluate<T: Element, N: Network<T>>(model: &mut N, set: &NormalizedSet<T>, batch_size: usize) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty test set".into()));
    }
    let mut correct = 0usize;
    for indices in batch_indices(set.len(), batch_size, false, 0) {
        let (x, labels) = set.batch(&indices)?;
        let logits = predict(model, &x)?;
        let k = logits.shape()[1];
        correct += logits
            .data()
            .chunks_exact(k)
            .zip(&labels)
            .filter(|(row, &y)| argmax_lowest(row) == y)
            .count();
    }
    Ok(100.0 * correct as f64 / set.len() as f64)
}

/// SHA-256 over every parameter value in registry order.
pub fn params_digest<T: Element>(params: &ParamSet<T>) -> String {
    let mut h = Sha256::new();
    let mut buf = Vec::new();
    for e in params.iter() {
        h.update(e.name.as_bytes());
        buf.clear();
        e.tensor.data().iter().for_each(|v| v.write_le(&mut buf));
        h.update(&buf);
    }
    hex::encode(h.finalize())
}

fn whitening_summary(w: &WhiteningFilters, patches: usize) -> WhiteningSummary {
    let mut h = Sha256::new();
    w.filters.iter().for_each(|v| h.update(v.to_le_bytes()));
    WhiteningSummary {
        fit_digest: w.fit_digest.clone(),
        filters_digest: hex::encode(h.finalize()),
        eps: w.eps,
        patches,
        eigvals: w.eigvals.clone(),
    }
}

/// A finished run with its trained network.
pub struct RunOutcome<T> {
    pub model: ResNet9<T>,
    pub records: Vec<MetricsRecord>,
    pub manifest: Manifest,
}

/// A finished run without the network, for precision-agnostic callers.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub records: Vec<MetricsRecord>,
    pub manifest: Manifest,
}

impl<T> From<RunOutcome<T>> for RunSummary {
    fn from(o: RunOutcome<T>) -> Self {
        RunSummary {
            records: o.records,
            manifest: o.manifest,
        }
    }
}

fn abort<T: Element>(model: &ResNet9<T>, metrics: &Path, err: Error) -> Error {
    let path = metrics.with_extension("abort.bin");
    match checkpoint::save(model, &path) {
        Ok(()) => error!("training aborted ({err}); diagnostic checkpoint at {}", path.display()),
        Err(e) => error!("training aborted ({err}); diagnostic checkpoint failed: {e}"),
    }
    err
}

/// Loads data, builds the network and trains until `max_epochs` or the
/// budget runs out, evaluating after every epoch (or meta-round). The budget
/// clock starts before any data is read. An epoch is only started if the
/// longest epoch seen so far (at least the initial evaluation time) still
/// fits in the remaining budget.
pub fn run_training<T: Element>(cfg: &RunConfig, sources: &ConfigSources, clock: &dyn Clock) -> Result<RunOutcome<T>> {
    cfg.validate()?;
    let budget = Budget::start(clock, cfg.budget_seconds);
    preflight(&cfg.metrics_out)?;
    let tag = cfg.recipe_tag();
    let seeds = Seeds {
        subset: cfg.seed,
        test_subset: cfg.seed ^ TEST_SALT,
        model: cfg.seed,
        augmentation: cfg.seed ^ AUG_SALT,
        whitening: cfg.seed ^ WHITEN_SALT,
        tasks: cfg.seed ^ TASK_SALT,
    };

    let train_all = load_cifar_binary(&train_paths(&cfg.data_dir), Split::Train)?;
    let test_all = load_cifar_binary(&test_paths(&cfg.data_dir), Split::Test)?;
    let train = sample_subset(&train_all, cfg.per_class, seeds.subset)?;
    drop(train_all);
    let test = if cfg.test_per_class == 0 {
        test_all
    } else {
        sample_subset(&test_all, cfg.test_per_class, seeds.test_subset)?
    };
    let stats = ChannelStats::fit(&train);
    let whitening = if cfg.ip {
        Some(fit_whitening(
            &train,
            &stats,
            cfg.whitening_patches,
            WhiteningFilters::DEFAULT_EPS,
            seeds.whitening,
        )?)
    } else {
        None
    };
    let spec = cfg.model_spec(whitening.as_ref());
    let mut model = ResNet9::<T>::build(spec.clone(), seeds.model)?;
    let train_set = NormalizedSet::<T>::new(&train, &stats);
    let test_set = NormalizedSet::<T>::new(&test, &stats);
    let initial_weights_digest = params_digest(model.params());
    info!(
        "{tag}: {} train / {} test images, {} parameters",
        train_set.len(),
        test_set.len(),
        model.params().num_elements()
    );

    let eval_start = budget.elapsed();
    let initial_accuracy = evaluate(&mut model, &test_set, cfg.batch_size)?;
    let after_init = budget.elapsed();
    let initial_eval_seconds = after_init - eval_start;

    let mut records = Vec::new();
    let mut warnings = Vec::new();
    let mut mltp_history = None;
    let stop_reason;

    if cfg.mltp {
        let split = split_tasks(&train, seeds.tasks)?;
        let tasks = split.normalized::<T>(&stats);
        let probe = MltpConfig {
            inner_steps: cfg.mltp_inner_steps,
            batch_size: cfg.batch_size,
            ..MltpConfig::default()
        };
        let per_round = tasks.iter().map(|t| probe.steps_for(t.len())).max().unwrap_or(1);
        let mut mcfg = cfg.mltp_config(cfg.meta_rounds() * per_round);
        mcfg.seed = seeds.augmentation;
        let outcome = mltp_train(
            &mut model,
            &tasks,
            &train_set,
            &mcfg,
            &budget,
            initial_eval_seconds,
            |m, round| {
                let acc = evaluate(m, &test_set, cfg.batch_size)?;
                let loss = round.task_losses.iter().sum::<f64>() / round.task_losses.len() as f64;
                let now = budget.elapsed();
                info!(
                    "{tag} round {}: loss {loss:.4}, accuracy {acc:.2}%, {now:.1}s",
                    round.round
                );
                records.push(MetricsRecord {
                    epoch: round.round,
                    wall_seconds: now,
                    train_loss: loss,
                    test_accuracy: acc,
                    lr: round.lr,
                    recipe: tag.clone(),
                });
                Ok(())
            },
        );
        let outcome = outcome.map_err(|e| abort(&model, &cfg.metrics_out, e))?;
        let first_round = records.first().map(|r| r.wall_seconds - after_init);
        if first_round.is_none_or(|d| d > cfg.budget_seconds) {
            let msg = format!(
                "one meta-round does not fit the {}s budget (first round: {})",
                cfg.budget_seconds,
                first_round.map_or("not started".into(), |d| format!("{d:.2}s"))
            );
            warn!("{msg}");
            warnings.push(msg);
        }
        let hp = history_path(&cfg.metrics_out);
        write_history(&hp, &outcome.history)?;
        mltp_history = Some(hp);
        stop_reason = StopReason::Mltp(outcome.stop);
    } else {
        let steps_per_epoch = train_set.len().div_ceil(cfg.batch_size);
        let opt = cfg.opt_config(cfg.max_epochs * steps_per_epoch);
        let mut state = OptState::new(model.params(), &opt);
        let plan = EpochPlan {
            batch_size: cfg.batch_size,
            shuffle: true,
            augment: cfg.augment,
            smoothing: cfg.smoothing(),
            seed: seeds.augmentation,
        };
        let mut estimate = initial_eval_seconds;
        let mut stop = StopReason::MaxEpochs;
        for epoch in 1..=cfg.max_epochs {
            if !budget.fits(estimate) {
                stop = StopReason::Budget;
                break;
            }
            let start = budget.elapsed();
            let stats = train_epoch(&mut model, &mut state, &opt, &train_set, &plan, epoch as u64)
                .map_err(|e| abort(&model, &cfg.metrics_out, e))?;
            let acc = evaluate(&mut model, &test_set, cfg.batch_size)?;
            let now = budget.elapsed();
            estimate = estimate.max(now - start);
            info!(
                "{tag} epoch {epoch}: loss {:.4}, accuracy {acc:.2}%, {now:.1}s",
                stats.mean_loss
            );
            records.push(MetricsRecord {
                epoch,
                wall_seconds: now,
                train_loss: stats.mean_loss,
                test_accuracy: acc,
                lr: stats.last_lr,
                recipe: tag.clone(),
            });
        }
        stop_reason = stop;
    }

    let epochs_completed = records.len();
    if records.is_empty() {
        records.push(MetricsRecord {
            epoch: 0,
            wall_seconds: after_init,
            train_loss: f64::NAN,
            test_accuracy: initial_accuracy,
            lr: 0.0,
            recipe: tag.clone(),
        });
    }

    let ckpt = checkpoint_path(&cfg.metrics_out);
    checkpoint::save(&model, &ckpt)?;
    let manifest = Manifest {
        library_version: env!("CARGO_PKG_VERSION").into(),
        recipe: tag,
        config: cfg.clone(),
        sources: sources.clone(),
        seeds,
        train_source_digest: train.source_digest.clone(),
        test_source_digest: test.source_digest.clone(),
        subset_digest: train.content_digest(),
        test_subset_digest: test.content_digest(),
        train_size: train.len(),
        test_size: test.len(),
        channel_stats: stats,
        whitening: whitening.as_ref().map(|w| whitening_summary(w, cfg.whitening_patches)),
        model_spec: spec,
        parameter_count: model.params().num_elements(),
        label_smoothing: cfg.smoothing(),
        weight_decay: cfg.weight_decay(),
        initial_weights_digest,
        initial_accuracy,
        initial_eval_seconds,
        epochs_completed,
        stop_reason,
        total_seconds: budget.elapsed(),
        final_accuracy: records.last().map_or(initial_accuracy, |r| r.test_accuracy),
        checkpoint: Some(ckpt),
        mltp_history,
        warnings,
    };
    write_metrics(&records, Some(&manifest), &cfg.metrics_out)?;
    Ok(RunOutcome {
        model,
        records,
        manifest,
    })
}

/// [`run_training`] at the configured precision.
pub fn run(cfg: &RunConfig, sources: &ConfigSources, clock: &dyn Clock) -> Result<RunSummary> {
    match cfg.precision {
        Precision::F32 => run_training::<f32>(cfg, sources, clock).map(Into::into),
        Precision::F64 => run_training::<f64>(cfg, sources, clock).map(Into::into),
    }
}

/// One line of the recipe comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub recipe: Recipe,
    pub metrics_out: PathBuf,
    pub outcome: std::result::Result<RecipeResult, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecipeResult {
    pub final_accuracy: f64,
    pub epochs: usize,
    pub wall_seconds: f64,
}

/// `runs/metrics.csv` + `sam+ip` → `runs/metrics.sam-ip.csv`.
pub fn recipe_metrics_path(base: &Path, recipe: Recipe) -> PathBuf {
    let stem = base.file_stem().and_then(|s| s.to_str()).unwrap_or("metrics");
    let ext = base.extension().and_then(|s| s.to_str()).unwrap_or("csv");
    base.with_file_name(format!("{stem}.{}.{ext}", recipe.tag().replace('+', "-")))
}

/// Runs each recipe in turn with its own budget and clock. A failing recipe
/// is reported and the rest still run.
pub fn recipe_matrix<C: Clock>(
    base: &RunConfig,
    recipes: &[Recipe],
    sources: &ConfigSources,
    mut clock: impl FnMut() -> C,
) -> Vec<SummaryRow> {
    recipes
        .iter()
        .map(|&recipe| {
            let mut cfg = recipe.apply(base);
            cfg.metrics_out = recipe_metrics_path(&base.metrics_out, recipe);
            let c = clock();
            let outcome = run(&cfg, sources, &c)
                .map(|s| RecipeResult {
                    final_accuracy: s.manifest.final_accuracy,
                    epochs: s.manifest.epochs_completed,
                    wall_seconds: s.manifest.total_seconds,
                })
                .map_err(|e| {
                    error!("recipe {recipe} failed: {e}");
                    e.to_string()
                });
            SummaryRow {
                recipe,
                metrics_out: cfg.metrics_out,
                outcome,
            }
        })
        .collect()
}

pub fn summary_table(rows: &[SummaryRow]) -> String {
    let mut s = String::from("recipe,status,final_accuracy,epochs,wall_seconds,metrics\n");
    for r in rows {
        let m = r.metrics_out.display();
        match &r.outcome {
            Ok(x) => s.push_str(&format!(
                "{},ok,{:.6},{},{:.6},{m}\n",
                r.recipe, x.final_accuracy, x.epochs, x.wall_seconds
            )),
            Err(e) => s.push_str(&format!("{},failed: {},,,,{m}\n", r.recipe, e.replace(',', ";"))),
        }
    }
    s
}
