//! Batch assembly: with-replacement sampling from a task's labeled training
//! pool, tokenization, and per-modality tensor packing.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::corpus::{Corpus, Split};
use crate::error::{CoreError, Result};
use crate::model::tokenizer::Tokenizer;
use crate::nn::tensor::Tensor;
use crate::task::{TaskKind, TaskSpec};

#[derive(Debug, Clone)]
pub enum BatchLabels {
    Class(Vec<usize>),
    Score(Vec<f64>),
}

/// One training/evaluation batch. Token rows are trimmed to the longest real
/// sequence in the batch; trailing positions would be padding for every row
/// and padding keys carry exactly zero attention weight, so trimming does
/// not change any real token's output.
#[derive(Debug, Clone)]
pub struct Batch {
    pub task: String,
    pub batch: usize,
    pub seq: usize,
    /// `batch * seq` token ids, row-major.
    pub tokens: Vec<u32>,
    /// `batch * seq` real-token mask.
    pub mask: Vec<bool>,
    /// `[batch, acoustic_dim]`.
    pub acoustic: Tensor,
    pub labels: BatchLabels,
}

/// Indices of training examples labeled for one task.
#[derive(Debug, Clone)]
pub struct TaskPool {
    pub task: String,
    pub indices: Vec<usize>,
}

impl TaskPool {
    pub fn new(corpus: &Corpus, task: &TaskSpec) -> Result<Self> {
        let indices = corpus.labeled_indices(Split::Train, &task.id);
        if indices.is_empty() {
            return Err(CoreError::Config(format!(
                "no training examples labeled for task {}",
                task.id
            )));
        }
        Ok(TaskPool {
            task: task.id.clone(),
            indices,
        })
    }
}

/// Pack the given corpus examples into one batch for `task`.
pub fn assemble_batch(
    corpus: &Corpus,
    tokenizer: &Tokenizer,
    indices: &[usize],
    task: &TaskSpec,
    max_len: usize,
) -> Result<Batch> {
    if indices.is_empty() {
        return Err(CoreError::Config("empty batch".into()));
    }
    let b = indices.len();
    let dim = corpus.schema.acoustic_dim;
    let mut rows = Vec::with_capacity(b);
    let mut real_len = 1;
    let mut acoustic = Vec::with_capacity(b * dim);
    let mut class_labels = Vec::new();
    let mut score_labels = Vec::new();
    for &idx in indices {
        let ex = &corpus.examples()[idx];
        let (ids, mask) = tokenizer.tokenize(&ex.text, max_len)?;
        real_len = real_len.max(mask.iter().filter(|&&m| m).count());
        rows.push((ids, mask));
        acoustic.extend_from_slice(&ex.acoustic);
        match task.kind {
            TaskKind::BinaryClassification => {
                let label = ex.stress.ok_or_else(|| {
                    CoreError::Data(format!("{}: missing stress label", ex.id))
                })?;
                class_labels.push(label as usize);
            }
            TaskKind::ScalarRegression => {
                let score = ex.score_label(&task.id).ok_or_else(|| {
                    CoreError::Data(format!("{}: missing {} label", ex.id, task.id))
                })?;
                score_labels.push(score);
            }
        }
    }
    let seq = real_len;
    let mut tokens = Vec::with_capacity(b * seq);
    let mut mask = Vec::with_capacity(b * seq);
    for (ids, m) in rows {
        tokens.extend_from_slice(&ids[..seq]);
        mask.extend_from_slice(&m[..seq]);
    }
    let labels = match task.kind {
        TaskKind::BinaryClassification => BatchLabels::Class(class_labels),
        TaskKind::ScalarRegression => BatchLabels::Score(score_labels),
    };
    Ok(Batch {
        task: task.id.clone(),
        batch: b,
        seq,
        tokens,
        mask,
        acoustic: Tensor::new(vec![b, dim], acoustic)?,
        labels,
    })
}

/// Draw `batch_size` examples uniformly with replacement from the task's
/// labeled training pool.
pub fn draw_batch(
    corpus: &Corpus,
    tokenizer: &Tokenizer,
    pool: &TaskPool,
    task: &TaskSpec,
    batch_size: usize,
    max_len: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Batch> {
    debug_assert_eq!(pool.task, task.id);
    let indices: Vec<usize> = (0..batch_size)
        .map(|_| pool.indices[rng.gen_range(0..pool.indices.len())])
        .collect();
    assemble_batch(corpus, tokenizer, &indices, task, max_len)
}
