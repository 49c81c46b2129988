//! The multimodal fusion architecture: transformer text encoder, MLP
//! acoustic encoder, concatenation fusion, and per-task output heads under
//! hard parameter sharing.

pub mod checkpoint;
pub mod config;
pub mod muser;
pub mod tokenizer;

pub use config::{Modality, ModelConfig};
pub use muser::MuserModel;
pub use tokenizer::{Tokenizer, PAD_ID, UNK_ID};

#[cfg(test)]
mod tests;
