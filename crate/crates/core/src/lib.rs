//! Multimodal stress detection with emotion recognition as auxiliary tasks.
//!
//! The crate is organized around the training pipeline:
//!
//! - [`nn`]: dense `f64` tensors, a reverse-mode autodiff tape, the attention
//!   encoder block, and a finite-difference gradient checker.
//! - [`model`]: the fusion architecture (transformer text encoder + MLP
//!   acoustic encoder, concat fusion, per-task heads), its tokenizer, and
//!   bit-exact checkpoints.
//! - [`optim`]: AdamW with decoupled weight decay, global-norm gradient
//!   clipping, early stopping.
//! - [`sched`]: task-mixing strategies for multi-task training — uniform,
//!   speed-based dynamic sampling over validation-metric ratios, and a
//!   loss-ratio baseline.
//! - [`data`]: JSONL corpora, speaker-level z-normalization, lexicon count
//!   features, a seeded synthetic corpus generator, and batch sampling.
//! - [`analysis`]: z-normalized linear fits, top-k indicator extraction,
//!   overlap reports, and paired significance tests.
//! - [`train`]: single-task / pre-training / multi-task training loops with
//!   validation metrics and deterministic epoch logs.

pub mod analysis;
pub mod data;
pub mod error;
pub mod model;
pub mod nn;
pub mod optim;
pub mod sched;
pub mod task;
pub mod train;
pub mod util;

pub use error::{CoreError, Result};
pub use nn::{ParamId, ParamStore, Tape, Tensor};
pub use task::{Metric, Orientation, TaskKind, TaskSpec};

// Callers seed model construction and training with this RNG.
pub use rand_chacha::ChaCha8Rng;
