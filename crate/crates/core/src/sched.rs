//! Task-mixing strategies for multi-task training.
//!
//! The core strategy is speed-based dynamic sampling: after every epoch each
//! task gets a learning-speed ratio comparing its current validation score
//! against the mean of its last `n` scores (orientation-aware, so accuracy
//! and RMSE become comparable), and the next epoch's task distribution is a
//! temperature softmax of those ratios. Uniform sampling and a loss-ratio
//! baseline are provided for comparison, and the first `n` epochs always use
//! uniform sampling as warm-up.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::nn::tensor::softmax_row;
use crate::task::{Orientation, TaskSpec};

/// Division guard for degenerate metrics (zero RMSE / zero accuracy history).
pub const RATIO_EPS: f64 = 1e-9;
/// Upper cap on learning-speed ratios.
pub const RATIO_MAX: f64 = 1e6;
/// Clamp range for loss-ratio weights.
pub const LOSS_RATIO_CLAMP: (f64, f64) = (1e-6, 1e6);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// All batches from one (main) task.
    SingleTask,
    Uniform,
    /// Softmax over validation-metric speed ratios.
    Speed,
    /// Softmax over one-epoch training-loss ratios.
    LossBased,
}

/// Ring buffer of the last `n` validation scores of one task. The score of
/// the epoch currently being compared is never inside the buffer; it is
/// appended only after ratio computation.
#[derive(Debug, Clone)]
pub struct MetricHistory {
    cap: usize,
    buf: std::collections::VecDeque<f64>,
}

impl MetricHistory {
    pub fn new(cap: usize) -> Self {
        assert!(cap >= 1, "history length must be >= 1");
        MetricHistory {
            cap,
            buf: std::collections::VecDeque::with_capacity(cap),
        }
    }

    pub fn push(&mut self, score: f64) {
        if self.buf.len() == self.cap {
            self.buf.pop_front();
        }
        self.buf.push_back(score);
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn mean(&self) -> Option<f64> {
        if self.buf.is_empty() {
            None
        } else {
            Some(self.buf.iter().sum::<f64>() / self.buf.len() as f64)
        }
    }
}

/// Speed ratio for a lower-is-better metric (RMSE): past mean over current.
/// Above 1 iff the current epoch improved on the history mean.
pub fn ratio_lower_better(history: &MetricHistory, current: f64) -> Result<f64> {
    if current < 0.0 {
        return Err(CoreError::Precondition(format!(
            "rmse score must be >= 0, got {current}"
        )));
    }
    let mean = history.mean().ok_or_else(|| {
        CoreError::Precondition("speed ratio needs a non-empty history".into())
    })?;
    Ok((mean / current.max(RATIO_EPS)).clamp(RATIO_EPS, RATIO_MAX))
}

/// Speed ratio for a higher-is-better metric (accuracy): current over past
/// mean.
pub fn ratio_higher_better(history: &MetricHistory, current: f64) -> Result<f64> {
    let mean = history.mean().ok_or_else(|| {
        CoreError::Precondition("speed ratio needs a non-empty history".into())
    })?;
    Ok((current / mean.max(RATIO_EPS)).clamp(RATIO_EPS, RATIO_MAX))
}

/// Per-task learning-speed ratios, in task-registry order.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedRatios(pub Vec<(String, f64)>);

/// Probability of drawing each task for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingDistribution {
    entries: Vec<(String, f64)>,
}

impl SamplingDistribution {
    pub fn new(entries: Vec<(String, f64)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(CoreError::Config("empty sampling distribution".into()));
        }
        let sum: f64 = entries.iter().map(|(_, p)| p).sum();
        if entries.iter().any(|(_, p)| *p < 0.0 || !p.is_finite()) {
            return Err(CoreError::Numeric("negative or non-finite probability".into()));
        }
        if (sum - 1.0).abs() > 1e-12 {
            return Err(CoreError::Numeric(format!(
                "probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(SamplingDistribution { entries })
    }

    pub fn uniform(task_ids: &[String]) -> Result<Self> {
        if task_ids.is_empty() {
            return Err(CoreError::Config("uniform distribution over zero tasks".into()));
        }
        let p = 1.0 / task_ids.len() as f64;
        SamplingDistribution::new(task_ids.iter().map(|t| (t.clone(), p)).collect())
    }

    pub fn single(task_id: &str) -> Self {
        SamplingDistribution {
            entries: vec![(task_id.to_string(), 1.0)],
        }
    }

    pub fn entries(&self) -> &[(String, f64)] {
        &self.entries
    }

    pub fn prob(&self, task_id: &str) -> Option<f64> {
        self.entries
            .iter()
            .find(|(t, _)| t == task_id)
            .map(|(_, p)| *p)
    }

    pub fn is_uniform(&self) -> bool {
        let p = 1.0 / self.entries.len() as f64;
        self.entries.iter().all(|(_, q)| (q - p).abs() < 1e-15)
    }

    /// Draw one task id i.i.d. from this distribution.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> &str {
        let draw: f64 = rng.gen();
        let mut acc = 0.0;
        for (task, p) in &self.entries {
            acc += p;
            if draw < acc {
                return task;
            }
        }
        // Rounding can leave acc marginally below 1; fall back to the last.
        &self.entries.last().expect("non-empty").0
    }
}

/// Softmax of `ratios / rho` (the speed-based update rule).
pub fn update_distribution(ratios: &SpeedRatios, rho: f64) -> Result<SamplingDistribution> {
    if !(rho > 0.0) {
        return Err(CoreError::Config(format!("temperature must be > 0, got {rho}")));
    }
    let logits: Vec<f64> = ratios.0.iter().map(|(_, r)| r / rho).collect();
    let probs = softmax_row(&logits);
    SamplingDistribution::new(
        ratios
            .0
            .iter()
            .zip(probs)
            .map(|((t, _), p)| (t.clone(), p))
            .collect(),
    )
}

/// Uniform distribution over the given tasks.
pub fn uniform_strategy(tasks: &[TaskSpec]) -> Result<SamplingDistribution> {
    let ids: Vec<String> = tasks.iter().map(|t| t.id.clone()).collect();
    SamplingDistribution::uniform(&ids)
}

/// Loss-ratio baseline: per task, the weight is the ratio of the last two
/// epoch-mean training losses (a stagnating task gets weight near 1, an
/// improving one below 1), and the distribution is `softmax(w / temp)`.
pub fn loss_based_strategy(
    ratios: &[(String, f64)],
    temp: f64,
) -> Result<SamplingDistribution> {
    if !(temp > 0.0) {
        return Err(CoreError::Config(format!("temperature must be > 0, got {temp}")));
    }
    let logits: Vec<f64> = ratios
        .iter()
        .map(|(_, w)| w.clamp(LOSS_RATIO_CLAMP.0, LOSS_RATIO_CLAMP.1) / temp)
        .collect();
    let probs = softmax_row(&logits);
    SamplingDistribution::new(
        ratios
            .iter()
            .zip(probs)
            .map(|((t, _), p)| (t.clone(), p))
            .collect(),
    )
}

/// Validation-score and training-loss bookkeeping for one task.
#[derive(Debug, Clone)]
struct TaskMetricState {
    history: MetricHistory,
    current: Option<f64>,
}

impl TaskMetricState {
    fn record(&mut self, score: f64) {
        if let Some(prev) = self.current.replace(score) {
            self.history.push(prev);
        }
    }
}

/// Scheduler-side state of a training run: per-task metric histories and
/// epoch-mean training losses.
#[derive(Debug, Clone)]
pub struct SamplerState {
    tasks: Vec<TaskSpec>,
    metrics: BTreeMap<String, TaskMetricState>,
    losses: BTreeMap<String, Vec<f64>>,
}

impl SamplerState {
    pub fn new(tasks: &[TaskSpec], history_len: usize) -> Self {
        let metrics = tasks
            .iter()
            .map(|t| {
                (
                    t.id.clone(),
                    TaskMetricState {
                        history: MetricHistory::new(history_len),
                        current: None,
                    },
                )
            })
            .collect();
        let losses = tasks.iter().map(|t| (t.id.clone(), Vec::new())).collect();
        SamplerState {
            tasks: tasks.to_vec(),
            metrics,
            losses,
        }
    }

    pub fn tasks(&self) -> &[TaskSpec] {
        &self.tasks
    }

    /// Record a validation score. The previous "current" score is appended
    /// to the history ring buffer, so the buffer never contains the score it
    /// will later be compared against.
    pub fn record_validation(&mut self, task_id: &str, score: f64) -> Result<()> {
        let state = self
            .metrics
            .get_mut(task_id)
            .ok_or_else(|| CoreError::Config(format!("unknown task {task_id}")))?;
        if !score.is_finite() {
            return Err(CoreError::Numeric(format!(
                "non-finite validation score for {task_id}"
            )));
        }
        state.record(score);
        Ok(())
    }

    /// Record an epoch-mean training loss. Tasks that received no batches
    /// this epoch carry their previous loss forward.
    pub fn record_train_loss(&mut self, task_id: &str, loss: Option<f64>) -> Result<()> {
        let series = self
            .losses
            .get_mut(task_id)
            .ok_or_else(|| CoreError::Config(format!("unknown task {task_id}")))?;
        match loss.or_else(|| series.last().copied()) {
            Some(l) => {
                series.push(l);
                Ok(())
            }
            None => {
                // No loss this epoch and none before: nothing to record yet.
                Ok(())
            }
        }
    }

    /// Orientation-aware speed ratios from the current scores and histories.
    pub fn speed_ratios(&self) -> Result<SpeedRatios> {
        let mut out = Vec::with_capacity(self.tasks.len());
        for task in &self.tasks {
            let state = &self.metrics[&task.id];
            let current = state.current.ok_or_else(|| {
                CoreError::Precondition(format!("no validation score recorded for {}", task.id))
            })?;
            let r = match task.orientation {
                Orientation::LowerBetter => ratio_lower_better(&state.history, current)?,
                Orientation::HigherBetter => ratio_higher_better(&state.history, current)?,
            };
            out.push((task.id.clone(), r));
        }
        Ok(SpeedRatios(out))
    }

    /// Per-task `loss(t-1) / loss(t-2)` ratios; requires two recorded epochs.
    pub fn loss_ratios(&self) -> Result<Vec<(String, f64)>> {
        let mut out = Vec::with_capacity(self.tasks.len());
        for task in &self.tasks {
            let series = &self.losses[&task.id];
            if series.len() < 2 {
                return Err(CoreError::Precondition(format!(
                    "loss-based sampling needs >= 2 recorded epoch losses for {}",
                    task.id
                )));
            }
            let last = series[series.len() - 1];
            let prev = series[series.len() - 2];
            let w = if prev.abs() < LOSS_RATIO_CLAMP.0 {
                // Zero prior loss: clamp instead of dividing by ~0.
                LOSS_RATIO_CLAMP.1.min(last / LOSS_RATIO_CLAMP.0)
            } else {
                last / prev
            };
            out.push((
                task.id.clone(),
                w.clamp(LOSS_RATIO_CLAMP.0, LOSS_RATIO_CLAMP.1),
            ));
        }
        Ok(out)
    }
}

/// Distribution used for `epoch` (1-based): uniform through the `warmup`
/// epochs, then the strategy's dynamic rule computed from completed epochs.
pub fn epoch_plan(
    strategy: Strategy,
    state: &SamplerState,
    epoch: usize,
    warmup: usize,
    rho: f64,
    loss_temp: f64,
) -> Result<(Option<SpeedRatios>, SamplingDistribution)> {
    match strategy {
        Strategy::SingleTask => {
            let main = state
                .tasks
                .first()
                .ok_or_else(|| CoreError::Config("no tasks registered".into()))?;
            Ok((None, SamplingDistribution::single(&main.id)))
        }
        Strategy::Uniform => Ok((None, uniform_strategy(&state.tasks)?)),
        Strategy::Speed => {
            if epoch <= warmup {
                Ok((None, uniform_strategy(&state.tasks)?))
            } else {
                let ratios = state.speed_ratios()?;
                let dist = update_distribution(&ratios, rho)?;
                Ok((Some(ratios), dist))
            }
        }
        Strategy::LossBased => {
            if epoch <= warmup {
                Ok((None, uniform_strategy(&state.tasks)?))
            } else {
                let ratios = state.loss_ratios()?;
                let dist = loss_based_strategy(&ratios, loss_temp)?;
                Ok((Some(SpeedRatios(ratios)), dist))
            }
        }
    }
}

/// One step of an offline scheduler replay.
#[derive(Debug, Clone)]
pub struct SimStep {
    pub epoch: usize,
    pub ratios: Option<SpeedRatios>,
    pub distribution: SamplingDistribution,
}

/// A trace row: validation scores (and optional train losses) after one
/// epoch. Row 0 is the initial validation of the untrained model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: usize,
    pub scores: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub losses: BTreeMap<String, f64>,
}

/// Replay scheduler logic over an injected metric trace, with no model in
/// the loop. Emits the distribution that would govern each epoch after the
/// first trace row.
pub fn simulate_trace(
    tasks: &[TaskSpec],
    rows: &[TraceRow],
    strategy: Strategy,
    history_len: usize,
    rho: f64,
    loss_temp: f64,
) -> Result<Vec<SimStep>> {
    if rows.is_empty() {
        return Err(CoreError::Data("empty metric trace".into()));
    }
    for (i, row) in rows.iter().enumerate() {
        if row.epoch != i {
            return Err(CoreError::Data(format!(
                "trace rows must be consecutive from epoch 0; row {i} is epoch {}",
                row.epoch
            )));
        }
        for task in tasks {
            if !row.scores.contains_key(&task.id) {
                return Err(CoreError::Data(format!(
                    "trace row {i} missing score for task {}",
                    task.id
                )));
            }
        }
    }
    let mut state = SamplerState::new(tasks, history_len);
    let record = |state: &mut SamplerState, row: &TraceRow| -> Result<()> {
        for task in tasks {
            state.record_validation(&task.id, row.scores[&task.id])?;
        }
        if row.epoch >= 1 {
            for task in tasks {
                state.record_train_loss(&task.id, row.losses.get(&task.id).copied())?;
            }
        }
        Ok(())
    };
    record(&mut state, &rows[0])?;
    let mut steps = Vec::new();
    for row in &rows[1..] {
        let epoch = row.epoch;
        let (ratios, distribution) =
            epoch_plan(strategy, &state, epoch, history_len, rho, loss_temp)?;
        steps.push(SimStep {
            epoch,
            ratios,
            distribution,
        });
        record(&mut state, row)?;
    }
    Ok(steps)
}
