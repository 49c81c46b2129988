//! Validation metrics and stress-class evaluation.

use serde::{Deserialize, Serialize};

use crate::data::batch::{assemble_batch, BatchLabels};
use crate::data::corpus::{Corpus, Split};
use crate::error::{CoreError, Result};
use crate::model::muser::MuserModel;
use crate::nn::tape::Tape;
use crate::task::{Metric, TaskSpec};

const EVAL_CHUNK: usize = 64;

/// Accuracy plus precision/recall/F1 for the stressed class, with the raw
/// confusion counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

/// Precision/recall/F1 from confusion counts; zero denominators yield 0.
pub fn eval_from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> EvalResult {
    let total = tp + fp + tn + fn_;
    let accuracy = if total == 0 {
        0.0
    } else {
        (tp + tn) as f64 / total as f64
    };
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    EvalResult { accuracy, precision, recall, f1, tp, fp, tn, fn_ }
}

fn eval_indices(corpus: &Corpus, split: Split, task: &TaskSpec) -> Result<Vec<usize>> {
    let indices = corpus.labeled_indices(split, &task.id);
    if indices.is_empty() {
        return Err(CoreError::Config(format!(
            "no {:?} examples labeled for task {}",
            split, task.id
        )));
    }
    Ok(indices)
}

/// Validation score of one task over a whole split: accuracy for
/// classification, whole-set RMSE for regression. Dropout is disabled.
pub fn validate(model: &MuserModel, corpus: &Corpus, split: Split, task_id: &str) -> Result<f64> {
    let task = model.task(task_id)?.clone();
    let indices = eval_indices(corpus, split, &task)?;
    let mut rng = crate::ChaCha8Rng::seed_from_u64(0);
    use rand::SeedableRng;

    let mut correct = 0usize;
    let mut sq_err = 0.0f64;
    let mut total = 0usize;
    for chunk in indices.chunks(EVAL_CHUNK) {
        let batch = assemble_batch(corpus, &model.tokenizer, chunk, &task, model.config.max_seq_len)?;
        let mut tape = Tape::new();
        let out = model.predict(&mut tape, &batch, task_id, false, &mut rng)?;
        let values = tape.value(out);
        match &batch.labels {
            BatchLabels::Class(labels) => {
                for (row, &label) in values.data().chunks(2).zip(labels) {
                    let predicted = (row[1] > row[0]) as usize;
                    correct += (predicted == label) as usize;
                }
            }
            BatchLabels::Score(targets) => {
                for (pred, target) in values.data().iter().zip(targets) {
                    sq_err += (pred - target) * (pred - target);
                }
            }
        }
        total += batch.batch;
    }
    Ok(match task.metric {
        Metric::Accuracy => correct as f64 / total as f64,
        Metric::Rmse => (sq_err / total as f64).sqrt(),
    })
}

/// Full stress-class evaluation (stressed = label 1) on one split.
pub fn evaluate_stress(model: &MuserModel, corpus: &Corpus, split: Split) -> Result<EvalResult> {
    let task = model
        .tasks
        .iter()
        .find(|t| t.kind == crate::task::TaskKind::BinaryClassification)
        .cloned()
        .ok_or_else(|| CoreError::Config("model has no classification task".into()))?;
    let indices = eval_indices(corpus, split, &task)?;
    use rand::SeedableRng;
    let mut rng = crate::ChaCha8Rng::seed_from_u64(0);

    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for chunk in indices.chunks(EVAL_CHUNK) {
        let batch = assemble_batch(corpus, &model.tokenizer, chunk, &task, model.config.max_seq_len)?;
        let mut tape = Tape::new();
        let out = model.predict(&mut tape, &batch, &task.id, false, &mut rng)?;
        let BatchLabels::Class(labels) = &batch.labels else {
            return Err(CoreError::Data("classification batch expected".into()));
        };
        for (row, &label) in tape.value(out).data().chunks(2).zip(labels) {
            let predicted = (row[1] > row[0]) as usize;
            match (predicted, label) {
                (1, 1) => tp += 1,
                (1, 0) => fp += 1,
                (0, 0) => tn += 1,
                (0, 1) => fn_ += 1,
                _ => unreachable!(),
            }
        }
    }
    Ok(eval_from_counts(tp, fp, tn, fn_))
}
