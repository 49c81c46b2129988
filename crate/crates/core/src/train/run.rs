//! The epoch-driven training drivers.
//!
//! Epoch structure: a fixed batch budget (the main task's training-set size
//! in batches) is spent across tasks according to the scheduler's
//! distribution; each batch runs one backward pass and one clipped optimizer
//! step on the shared parameters plus the active task's head. After every
//! epoch all tasks are validated, metric histories advance, and early
//! stopping tracks the main task's validation accuracy. Evaluation uses the
//! best-validation checkpoint, never the last epoch.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::batch::{draw_batch, TaskPool};
use crate::data::corpus::{Corpus, Split};
use crate::error::{CoreError, Result};
use crate::model::muser::MuserModel;
use crate::nn::params::ParamId;
use crate::nn::tape::Tape;
use crate::nn::tensor::Tensor;
use crate::optim::{clip_global_norm, AdamW, EarlyStop, OptimConfig, StopDecision};
use crate::sched::{epoch_plan, SamplerState, SamplingDistribution, Strategy};
use crate::task::{TaskKind, TaskSpec};
use crate::train::metrics::{evaluate_stress, validate, EvalResult};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Defaults to ceil(main-task training size / batch_size).
    pub batches_per_epoch: Option<usize>,
    pub max_epochs: usize,
    pub strategy: Strategy,
    /// Metric history length n; also the uniform warm-up span.
    pub history: usize,
    /// Speed-sampling temperature.
    pub rho: f64,
    /// Loss-ratio baseline temperature.
    pub loss_temp: f64,
    pub seed: u64,
    pub optim: OptimConfig,
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            batches_per_epoch: None,
            max_epochs: 1000,
            strategy: Strategy::Speed,
            history: 5,
            rho: 0.1,
            loss_temp: 2.0,
            seed: 1,
            optim: OptimConfig::default(),
            patience: 20,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.optim.validate()?;
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(CoreError::Config(
                "batch_size, max_epochs, and patience must be >= 1".into(),
            ));
        }
        if self.history == 0 {
            return Err(CoreError::Config("history must be >= 1".into()));
        }
        if !(self.rho > 0.0) || !(self.loss_temp > 0.0) {
            return Err(CoreError::Config("temperatures must be > 0".into()));
        }
        if self.strategy == Strategy::LossBased && self.history < 2 {
            return Err(CoreError::Config(
                "loss-based sampling needs a warm-up of at least 2 epochs (history >= 2)".into(),
            ));
        }
        Ok(())
    }
}

/// A task together with the corpus it draws batches from. The first binding
/// is the main task; auxiliary bindings may point at the same corpus
/// (internal auxiliaries) or a different one (external).
pub struct TaskBinding<'a> {
    pub task: TaskSpec,
    pub corpus: &'a Corpus,
}

#[derive(Debug, Clone)]
pub struct EpochReport {
    pub epoch: usize,
    pub val_scores: BTreeMap<String, f64>,
    pub ratios: Option<Vec<(String, f64)>>,
    /// None for the initial (epoch 0) validation row.
    pub distribution: Option<Vec<(String, f64)>>,
    pub batch_counts: BTreeMap<String, usize>,
    pub mean_losses: BTreeMap<String, Option<f64>>,
    pub wall_time: Duration,
}

#[derive(Debug)]
pub struct RunOutput {
    pub reports: Vec<EpochReport>,
    pub best_epoch: usize,
    pub best_val: f64,
    pub epochs_run: usize,
    pub test: EvalResult,
}

struct RunRngs {
    sampler: ChaCha8Rng,
    batches: ChaCha8Rng,
    dropout: ChaCha8Rng,
}

impl RunRngs {
    fn new(seed: u64) -> Self {
        let mk = |stream: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(stream);
            rng
        };
        RunRngs {
            sampler: mk(1),
            batches: mk(2),
            dropout: mk(3),
        }
    }
}

fn find_binding<'a, 'b>(
    bindings: &'a [TaskBinding<'b>],
    task_id: &str,
) -> Result<&'a TaskBinding<'b>> {
    bindings
        .iter()
        .find(|b| b.task.id == task_id)
        .ok_or_else(|| CoreError::Config(format!("no corpus bound for task {task_id}")))
}

/// One epoch: draw a task per batch, one clipped optimizer step each.
#[allow(clippy::too_many_arguments)]
fn run_epoch(
    model: &mut MuserModel,
    bindings: &[TaskBinding],
    pools: &BTreeMap<String, TaskPool>,
    dist: &SamplingDistribution,
    optimizer: &mut AdamW,
    config: &TrainConfig,
    batches_per_epoch: usize,
    rngs: &mut RunRngs,
) -> Result<(BTreeMap<String, usize>, BTreeMap<String, Option<f64>>)> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut loss_sums: BTreeMap<String, f64> = BTreeMap::new();
    for binding in bindings {
        counts.insert(binding.task.id.clone(), 0);
        loss_sums.insert(binding.task.id.clone(), 0.0);
    }
    for batch_idx in 0..batches_per_epoch {
        let task_id = dist.sample(&mut rngs.sampler).to_string();
        let binding = find_binding(bindings, &task_id)?;
        let pool = &pools[&task_id];
        let batch = draw_batch(
            binding.corpus,
            &model.tokenizer,
            pool,
            &binding.task,
            config.batch_size,
            model.config.max_seq_len,
            &mut rngs.batches,
        )?;

        let mut tape = Tape::new();
        let loss = model.loss(&mut tape, &batch, &task_id, true, &mut rngs.dropout)?;
        let loss_value = tape.value(loss).item()?;
        if !loss_value.is_finite() {
            return Err(CoreError::Numeric(format!(
                "non-finite {task_id} loss at batch {batch_idx}"
            )));
        }
        tape.backward(loss)?;
        tape.accumulate_param_grads(model.store_mut());

        let step_ids = model.step_param_ids(&task_id)?;
        clip_global_norm(model.store_mut(), &step_ids, config.optim.clip_norm)?;
        optimizer.step(model.store_mut(), &step_ids)?;
        model.store_mut().zero_grads(&step_ids);

        *counts.get_mut(&task_id).unwrap() += 1;
        *loss_sums.get_mut(&task_id).unwrap() += loss_value;
    }
    let mean_losses = counts
        .iter()
        .map(|(task, &c)| {
            let mean = if c == 0 { None } else { Some(loss_sums[task] / c as f64) };
            (task.clone(), mean)
        })
        .collect();
    Ok((counts, mean_losses))
}

fn validate_all(
    model: &MuserModel,
    bindings: &[TaskBinding],
) -> Result<BTreeMap<String, f64>> {
    let mut scores = BTreeMap::new();
    for binding in bindings {
        let score = validate(model, binding.corpus, Split::Val, &binding.task.id)?;
        scores.insert(binding.task.id.clone(), score);
    }
    Ok(scores)
}

fn check_bindings(model: &MuserModel, bindings: &[TaskBinding]) -> Result<()> {
    if bindings.is_empty() {
        return Err(CoreError::Config("no task bindings".into()));
    }
    let main = &bindings[0];
    if main.task.kind != TaskKind::BinaryClassification {
        return Err(CoreError::Config(
            "the main (first) task must be the binary classification task".into(),
        ));
    }
    for split in [Split::Train, Split::Val, Split::Test] {
        if !main.corpus.has_labels(split, &main.task.id) {
            return Err(CoreError::Config(format!(
                "main task {} needs labels in {:?}",
                main.task.id, split
            )));
        }
    }
    for binding in &bindings[1..] {
        for split in [Split::Train, Split::Val] {
            if !binding.corpus.has_labels(split, &binding.task.id) {
                return Err(CoreError::Config(format!(
                    "auxiliary task {} needs labels in {:?}",
                    binding.task.id, split
                )));
            }
        }
    }
    for binding in bindings {
        model.task(&binding.task.id)?;
    }
    Ok(())
}

fn default_batches_per_epoch(config: &TrainConfig, main: &TaskBinding) -> usize {
    config.batches_per_epoch.unwrap_or_else(|| {
        let n = main
            .corpus
            .labeled_indices(Split::Train, &main.task.id)
            .len();
        n.div_ceil(config.batch_size).max(1)
    })
}

/// Multi-task training with the configured sampling strategy.\
/// Loop: plan distribution -> run epoch -> validate all tasks -> advance
/// histories -> early-stop on main validation accuracy. Restores the best
/// checkpoint and evaluates the main task on the test split.
pub fn multitask_train(
    model: &mut MuserModel,
    bindings: &[TaskBinding],
    config: &TrainConfig,
) -> Result<RunOutput> {
    config.validate()?;
    check_bindings(model, bindings)?;
    let main = &bindings[0];
    let batches_per_epoch = default_batches_per_epoch(config, main);

    let tasks: Vec<TaskSpec> = bindings.iter().map(|b| b.task.clone()).collect();
    let mut pools = BTreeMap::new();
    for binding in bindings {
        pools.insert(binding.task.id.clone(), TaskPool::new(binding.corpus, &binding.task)?);
    }
    let mut state = SamplerState::new(&tasks, config.history);
    let mut rngs = RunRngs::new(config.seed);
    let mut optimizer = AdamW::new(config.optim)?;
    let mut early = EarlyStop::new(config.patience);
    let all_ids: Vec<ParamId> = model.all_param_ids();
    let mut best_snapshot: Option<Vec<Tensor>> = None;
    let mut reports = Vec::new();

    // Epoch 0: validate the untrained model so histories start with a
    // baseline and the first dynamic epoch sees a full window.
    let t0 = Instant::now();
    let initial_scores = validate_all(model, bindings)?;
    for (task, score) in &initial_scores {
        state.record_validation(task, *score)?;
    }
    reports.push(EpochReport {
        epoch: 0,
        val_scores: initial_scores,
        ratios: None,
        distribution: None,
        batch_counts: bindings.iter().map(|b| (b.task.id.clone(), 0)).collect(),
        mean_losses: bindings.iter().map(|b| (b.task.id.clone(), None)).collect(),
        wall_time: t0.elapsed(),
    });

    let mut epochs_run = 0;
    for epoch in 1..=config.max_epochs {
        let t = Instant::now();
        let (ratios, dist) = epoch_plan(
            config.strategy,
            &state,
            epoch,
            config.history,
            config.rho,
            config.loss_temp,
        )?;
        let (batch_counts, mean_losses) = run_epoch(
            model,
            bindings,
            &pools,
            &dist,
            &mut optimizer,
            config,
            batches_per_epoch,
            &mut rngs,
        )?;
        let val_scores = validate_all(model, bindings)?;
        for (task, score) in &val_scores {
            state.record_validation(task, *score)?;
        }
        for binding in bindings {
            state.record_train_loss(&binding.task.id, mean_losses[&binding.task.id])?;
        }
        epochs_run = epoch;

        let main_score = val_scores[&main.task.id];
        reports.push(EpochReport {
            epoch,
            val_scores,
            ratios: ratios.map(|r| r.0),
            distribution: Some(dist.entries().to_vec()),
            batch_counts,
            mean_losses,
            wall_time: t.elapsed(),
        });

        match early.update(main_score, epoch) {
            StopDecision::Improved => {
                best_snapshot = Some(model.store().snapshot(&all_ids));
            }
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }

    let snapshot = best_snapshot.ok_or_else(|| {
        CoreError::Precondition("no epoch completed; nothing to evaluate".into())
    })?;
    model.store_mut().restore(&all_ids, &snapshot)?;
    let test = evaluate_stress(model, main.corpus, Split::Test)?;
    Ok(RunOutput {
        reports,
        best_epoch: early.best_epoch,
        best_val: early.best_score,
        epochs_run,
        test,
    })
}

/// Fixed-length single-task pre-training phases followed by main-task
/// training under early stopping. An empty schedule is plain from-scratch
/// single-task training. Optimizer state resets at phase boundaries.
pub fn pretrain_then_finetune(
    model: &mut MuserModel,
    schedule: &[(String, usize)],
    bindings: &[TaskBinding],
    config: &TrainConfig,
) -> Result<RunOutput> {
    config.validate()?;
    check_bindings(model, bindings)?;
    let main = &bindings[0];
    let batches_per_epoch = default_batches_per_epoch(config, main);
    let mut rngs = RunRngs::new(config.seed);
    let mut reports = Vec::new();
    let mut epoch_offset = 0;

    for (task_id, epochs) in schedule {
        let binding = find_binding(bindings, task_id)?;
        let pool = TaskPool::new(binding.corpus, &binding.task)?;
        let pools = BTreeMap::from([(task_id.clone(), pool)]);
        let dist = SamplingDistribution::single(task_id);
        let mut optimizer = AdamW::new(config.optim)?;
        let phase_bindings = std::slice::from_ref(binding);
        for phase_epoch in 1..=*epochs {
            let t = Instant::now();
            let (batch_counts, mean_losses) = run_epoch(
                model,
                phase_bindings,
                &pools,
                &dist,
                &mut optimizer,
                config,
                batches_per_epoch,
                &mut rngs,
            )?;
            let val_scores = validate_all(model, bindings)?;
            reports.push(EpochReport {
                epoch: epoch_offset + phase_epoch,
                val_scores,
                ratios: None,
                distribution: Some(dist.entries().to_vec()),
                batch_counts,
                mean_losses,
                wall_time: t.elapsed(),
            });
        }
        epoch_offset += epochs;
    }

    // Fine-tune on the main task alone, early-stopped.
    let finetune_config = TrainConfig {
        strategy: Strategy::SingleTask,
        ..config.clone()
    };
    let main_only = std::slice::from_ref(&bindings[0]);
    let mut output = multitask_train(model, main_only, &finetune_config)?;
    if epoch_offset > 0 {
        // The fine-tune stage's epoch-0 row duplicates the state already
        // logged by the last pre-training epoch.
        output.reports.remove(0);
    }
    for report in &mut output.reports {
        report.epoch += epoch_offset;
    }
    output.best_epoch += epoch_offset;
    let mut all = reports;
    all.extend(output.reports);
    output.reports = all;
    Ok(output)
}
