//! Corpora: JSONL ingestion, speaker-level normalization, lexicon count
//! features, synthetic corpus generation, and batch sampling.

pub mod batch;
pub mod corpus;
pub mod lexicon;
pub mod normalize;
pub mod synth;

pub use batch::{draw_batch, Batch, BatchLabels, TaskPool};
pub use corpus::{Corpus, CorpusSchema, Example, Split};
pub use lexicon::LexiconSpec;
pub use normalize::{speaker_z_normalize, SpeakerStats};
pub use synth::{default_lexicon, gen_synthetic, GenConfig};

#[cfg(test)]
mod tests;
