//! Whitespace/punctuation tokenizer with a corpus-built vocabulary.

use std::collections::BTreeMap;

use crate::error::{CoreError, Result};
use crate::util::split_tokens;

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tokenizer {
    vocab: BTreeMap<String, u32>,
}

impl Tokenizer {
    /// Build a vocabulary from training texts, keeping tokens that occur at
    /// least `min_freq` times. Ids are assigned in sorted token order after
    /// the reserved padding and unknown ids, so construction is
    /// deterministic.
    pub fn build<'a>(texts: impl Iterator<Item = &'a str>, min_freq: usize) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for text in texts {
            for token in split_tokens(text) {
                *counts.entry(token).or_insert(0) += 1;
            }
        }
        let mut vocab = BTreeMap::new();
        let mut next = UNK_ID + 1;
        for (token, count) in counts {
            if count >= min_freq {
                vocab.insert(token, next);
                next += 1;
            }
        }
        Tokenizer { vocab }
    }

    /// Including the reserved padding and unknown ids.
    pub fn vocab_size(&self) -> usize {
        self.vocab.len() + 2
    }

    /// Lowercase, split, map to ids (unknown tokens to [`UNK_ID`]), truncate
    /// to `max_len`, pad with [`PAD_ID`]. The mask marks real tokens. Empty
    /// text maps to a single unknown token.
    pub fn tokenize(&self, text: &str, max_len: usize) -> Result<(Vec<u32>, Vec<bool>)> {
        if max_len == 0 {
            return Err(CoreError::Config("max_len must be >= 1".into()));
        }
        let mut ids: Vec<u32> = split_tokens(text)
            .into_iter()
            .map(|t| self.vocab.get(&t).copied().unwrap_or(UNK_ID))
            .collect();
        if ids.is_empty() {
            ids.push(UNK_ID);
        }
        ids.truncate(max_len);
        let mut mask = vec![true; ids.len()];
        while ids.len() < max_len {
            ids.push(PAD_ID);
            mask.push(false);
        }
        Ok((ids, mask))
    }

    /// Vocabulary entries for serialization (excludes the reserved ids).
    pub fn entries(&self) -> Vec<(String, u32)> {
        self.vocab.iter().map(|(t, id)| (t.clone(), *id)).collect()
    }

    pub fn from_entries(entries: Vec<(String, u32)>) -> Result<Self> {
        let mut vocab = BTreeMap::new();
        for (token, id) in entries {
            if id <= UNK_ID {
                return Err(CoreError::Data(format!(
                    "vocabulary entry {token} uses reserved id {id}"
                )));
            }
            if vocab.insert(token.clone(), id).is_some() {
                return Err(CoreError::Data(format!("duplicate vocabulary token {token}")));
            }
        }
        Ok(Tokenizer { vocab })
    }
}
