//! The fusion model: transformer text encoder, MLP acoustic encoder,
//! concatenation fusion, and per-task linear heads.
//!
//! Hard sharing boundary: every parameter belongs to exactly one of the
//! shared group (both encoders and the text projection) or one task head.
//! An optimizer step for a batch of task T touches shared params and
//! heads[T] only.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::batch::{Batch, BatchLabels};
use crate::error::{CoreError, Result};
use crate::model::config::{Modality, ModelConfig};
use crate::model::tokenizer::Tokenizer;
use crate::nn::block::{attention_block, sinusoidal_positions, AttentionBlockParams};
use crate::nn::params::{normal_init, xavier_uniform, ParamId, ParamStore};
use crate::nn::tape::{NodeId, Tape};
use crate::nn::tensor::Tensor;
use crate::task::{TaskKind, TaskSpec};

const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
struct TextEncoder {
    embedding: ParamId,
    blocks: Vec<AttentionBlockParams>,
    proj_w: ParamId,
    proj_b: ParamId,
    /// Constant sinusoidal position table, `[max_seq_len, hidden]`.
    positions: Tensor,
}

#[derive(Debug, Clone)]
struct AcousticEncoder {
    layers: Vec<(ParamId, ParamId)>,
}

#[derive(Debug, Clone)]
struct Head {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone)]
pub struct MuserModel {
    pub config: ModelConfig,
    pub modality: Modality,
    pub tasks: Vec<TaskSpec>,
    pub tokenizer: Tokenizer,
    store: ParamStore,
    text: Option<TextEncoder>,
    acoustic: Option<AcousticEncoder>,
    heads: BTreeMap<String, Head>,
    shared_ids: Vec<ParamId>,
}

impl MuserModel {
    pub fn new(
        mut config: ModelConfig,
        modality: Modality,
        tasks: Vec<TaskSpec>,
        tokenizer: Tokenizer,
        seed: u64,
    ) -> Result<Self> {
        config.vocab_size = tokenizer.vocab_size();
        config.validate()?;
        if tasks.is_empty() {
            return Err(CoreError::Config("model needs at least one task".into()));
        }
        for task in &tasks {
            task.validate()?;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut shared_ids = Vec::new();

        let text = match modality {
            Modality::Acoustic => None,
            _ => {
                let embedding = store.add(
                    "text.embedding",
                    normal_init(&mut rng, vec![config.vocab_size, config.text_hidden], 0.5),
                    true,
                );
                let blocks = (0..config.text_layers)
                    .map(|i| {
                        AttentionBlockParams::init(
                            &mut store,
                            &mut rng,
                            &format!("text.layer{i}"),
                            config.text_hidden,
                            config.text_ff,
                        )
                    })
                    .collect::<Vec<_>>();
                let proj_w = store.add(
                    "text.proj_w",
                    xavier_uniform(&mut rng, config.text_hidden, config.repr_dim),
                    true,
                );
                let proj_b = store.add("text.proj_b", Tensor::zeros(vec![config.repr_dim]), true);
                Some(TextEncoder {
                    embedding,
                    blocks,
                    proj_w,
                    proj_b,
                    positions: sinusoidal_positions(config.max_seq_len, config.text_hidden),
                })
            }
        };
        let acoustic = match modality {
            Modality::Text => None,
            _ => {
                let mut layers = Vec::with_capacity(config.acoustic_layers);
                let mut in_dim = config.acoustic_input_dim;
                for i in 0..config.acoustic_layers {
                    let w = store.add(
                        format!("acoustic.layer{i}.w"),
                        xavier_uniform(&mut rng, in_dim, config.acoustic_hidden),
                        true,
                    );
                    let b = store.add(
                        format!("acoustic.layer{i}.b"),
                        Tensor::zeros(vec![config.acoustic_hidden]),
                        true,
                    );
                    layers.push((w, b));
                    in_dim = config.acoustic_hidden;
                }
                Some(AcousticEncoder { layers })
            }
        };
        if let Some(t) = &text {
            shared_ids.push(t.embedding);
            for block in &t.blocks {
                shared_ids.extend(block.ids());
            }
            shared_ids.push(t.proj_w);
            shared_ids.push(t.proj_b);
        }
        if let Some(a) = &acoustic {
            for (w, b) in &a.layers {
                shared_ids.push(*w);
                shared_ids.push(*b);
            }
        }

        let fused_dim = match modality {
            Modality::Text => config.repr_dim,
            Modality::Acoustic => config.acoustic_hidden,
            Modality::Multimodal => config.repr_dim + config.acoustic_hidden,
        };
        let mut heads = BTreeMap::new();
        for task in &tasks {
            let outputs = task.head_outputs();
            let w = store.add(
                format!("head.{}.w", task.id),
                xavier_uniform(&mut rng, fused_dim, outputs),
                true,
            );
            // Regression heads start at the label-range midpoint so the
            // untrained model's RMSE is the score spread, not the score
            // magnitude.
            let bias_init = match (task.kind, task.label_range) {
                (TaskKind::ScalarRegression, Some((lo, hi))) => 0.5 * (lo + hi),
                _ => 0.0,
            };
            let b = store.add(
                format!("head.{}.b", task.id),
                Tensor::new(vec![outputs], vec![bias_init; outputs])?,
                true,
            );
            heads.insert(task.id.clone(), Head { w, b });
        }

        Ok(MuserModel {
            config,
            modality,
            tasks,
            tokenizer,
            store,
            text,
            acoustic,
            heads,
            shared_ids,
        })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn task(&self, task_id: &str) -> Result<&TaskSpec> {
        self.tasks
            .iter()
            .find(|t| t.id == task_id)
            .ok_or_else(|| CoreError::Config(format!("unknown task {task_id}")))
    }

    pub fn shared_param_ids(&self) -> &[ParamId] {
        &self.shared_ids
    }

    pub fn head_param_ids(&self, task_id: &str) -> Result<Vec<ParamId>> {
        let head = self
            .heads
            .get(task_id)
            .ok_or_else(|| CoreError::Config(format!("no head for task {task_id}")))?;
        Ok(vec![head.w, head.b])
    }

    /// Parameters touched by one optimizer step on a batch of `task_id`.
    pub fn step_param_ids(&self, task_id: &str) -> Result<Vec<ParamId>> {
        let mut ids = self.shared_ids.clone();
        ids.extend(self.head_param_ids(task_id)?);
        Ok(ids)
    }

    pub fn all_param_ids(&self) -> Vec<ParamId> {
        self.store.ids()
    }

    /// Every parameter belongs to exactly one group (shared or one head).
    pub fn audit_partition(&self) -> Result<()> {
        let mut owner: Vec<Option<String>> = vec![None; self.store.len()];
        let claim = |id: ParamId, group: &str, owner: &mut Vec<Option<String>>| -> Result<()> {
            match &owner[id.index()] {
                Some(prev) => Err(CoreError::Config(format!(
                    "parameter {} claimed by both {prev} and {group}",
                    self.store.node(id).name
                ))),
                None => {
                    owner[id.index()] = Some(group.to_string());
                    Ok(())
                }
            }
        };
        for id in &self.shared_ids {
            claim(*id, "shared", &mut owner)?;
        }
        for (task, head) in &self.heads {
            claim(head.w, task, &mut owner)?;
            claim(head.b, task, &mut owner)?;
        }
        if let Some(idx) = owner.iter().position(|o| o.is_none()) {
            return Err(CoreError::Config(format!(
                "parameter {} belongs to no group",
                self.store.node(ParamId(idx)).name
            )));
        }
        Ok(())
    }

    /// Embedding + positions -> encoder blocks -> masked mean pool ->
    /// projection to `repr_dim`.
    pub fn encode_text(
        &self,
        tape: &mut Tape,
        tokens: &[u32],
        mask: &[bool],
        batch: usize,
        seq: usize,
    ) -> Result<NodeId> {
        self.encode_text_in(&self.store, tape, tokens, mask, batch, seq)
    }

    /// [`MuserModel::encode_text`] against an external parameter store (the
    /// gradient checker perturbs a store copy).
    pub fn encode_text_in(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        tokens: &[u32],
        mask: &[bool],
        batch: usize,
        seq: usize,
    ) -> Result<NodeId> {
        let enc = self
            .text
            .as_ref()
            .ok_or_else(|| CoreError::Config("model has no text encoder".into()))?;
        if seq > self.config.max_seq_len {
            return Err(CoreError::Config(format!(
                "sequence length {seq} exceeds the configured maximum {}",
                self.config.max_seq_len
            )));
        }
        let table = tape.param(store, enc.embedding);
        let emb = tape.embedding(table, tokens, batch, seq)?;
        // Tile the constant position rows across the batch.
        let d = self.config.text_hidden;
        let pos_rows = &enc.positions.data()[..seq * d];
        let mut tiled = Vec::with_capacity(batch * seq * d);
        for _ in 0..batch {
            tiled.extend_from_slice(pos_rows);
        }
        let positions = Tensor::new(vec![batch, seq, d], tiled)?;
        let mut x = tape.add_const(emb, &positions)?;
        for block in &enc.blocks {
            x = attention_block(
                tape,
                store,
                x,
                block,
                self.config.text_heads,
                mask,
                LAYER_NORM_EPS,
            )?
            .output;
        }
        let pooled = tape.mean_pool_masked(x, mask)?;
        let (w, b) = (tape.param(store, enc.proj_w), tape.param(store, enc.proj_b));
        tape.linear(pooled, w, b)
    }

    /// Stack of `acoustic_layers` linear + ReLU layers.
    pub fn encode_acoustic(&self, tape: &mut Tape, features: Tensor) -> Result<NodeId> {
        self.encode_acoustic_in(&self.store, tape, features)
    }

    pub fn encode_acoustic_in(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        features: Tensor,
    ) -> Result<NodeId> {
        let enc = self
            .acoustic
            .as_ref()
            .ok_or_else(|| CoreError::Config("model has no acoustic encoder".into()))?;
        if features.last_dim() != self.config.acoustic_input_dim {
            return Err(CoreError::Data(format!(
                "acoustic features have dim {}, expected {}",
                features.last_dim(),
                self.config.acoustic_input_dim
            )));
        }
        let mut x = tape.input(features);
        for (w, b) in &enc.layers {
            let (wn, bn) = (tape.param(store, *w), tape.param(store, *b));
            let lin = tape.linear(x, wn, bn)?;
            x = tape.relu(lin);
        }
        Ok(x)
    }

    /// Modality-appropriate representation -> dropout -> task head.
    /// Classification heads return `[batch, 2]` logits, regression heads a
    /// `[batch, 1]` score.
    pub fn predict(
        &self,
        tape: &mut Tape,
        batch: &Batch,
        task_id: &str,
        training: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<NodeId> {
        self.predict_in(&self.store, tape, batch, task_id, training, rng)
    }

    pub fn predict_in(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        batch: &Batch,
        task_id: &str,
        training: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<NodeId> {
        let head = self
            .heads
            .get(task_id)
            .ok_or_else(|| CoreError::Config(format!("no head for task {task_id}")))?;
        let repr = match self.modality {
            Modality::Text => {
                self.encode_text_in(store, tape, &batch.tokens, &batch.mask, batch.batch, batch.seq)?
            }
            Modality::Acoustic => self.encode_acoustic_in(store, tape, batch.acoustic.clone())?,
            Modality::Multimodal => {
                let t = self
                    .encode_text_in(store, tape, &batch.tokens, &batch.mask, batch.batch, batch.seq)?;
                let a = self.encode_acoustic_in(store, tape, batch.acoustic.clone())?;
                tape.concat_last(t, a)?
            }
        };
        let dropped = tape.dropout(repr, self.config.dropout, training, rng)?;
        let (w, b) = (tape.param(store, head.w), tape.param(store, head.b));
        tape.linear(dropped, w, b)
    }

    /// Task loss for a batch: cross-entropy for classification, MSE for
    /// regression.
    pub fn loss(
        &self,
        tape: &mut Tape,
        batch: &Batch,
        task_id: &str,
        training: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<NodeId> {
        self.loss_in(&self.store, tape, batch, task_id, training, rng)
    }

    pub fn loss_in(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        batch: &Batch,
        task_id: &str,
        training: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<NodeId> {
        let task = self.task(task_id)?;
        let output = self.predict_in(store, tape, batch, task_id, training, rng)?;
        match (&task.kind, &batch.labels) {
            (TaskKind::BinaryClassification, BatchLabels::Class(labels)) => {
                tape.cross_entropy_logits(output, labels)
            }
            (TaskKind::ScalarRegression, BatchLabels::Score(scores)) => {
                let target = tape.input(Tensor::new(vec![scores.len(), 1], scores.clone())?);
                tape.mse_loss(output, target)
            }
            _ => Err(CoreError::Data(format!(
                "batch labels do not match task kind for {task_id}"
            ))),
        }
    }
}
