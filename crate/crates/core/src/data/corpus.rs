//! Example/corpus representation and JSONL ingestion.

use std::collections::BTreeSet;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, LineIssue, Result};
use crate::task::{ACTIVATION, STRESS, VALENCE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];
}

/// One utterance: transcript text, a fixed-size acoustic feature vector, and
/// whichever task labels the corpus provides.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub speaker_id: String,
    pub text: String,
    pub acoustic: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stress: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activation: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valence: Option<f64>,
    pub split: Split,
}

impl Example {
    /// Regression target for a task id, if labeled.
    pub fn score_label(&self, task_id: &str) -> Option<f64> {
        match task_id {
            ACTIVATION => self.activation,
            VALENCE => self.valence,
            _ => None,
        }
    }

    pub fn has_task_label(&self, task_id: &str) -> bool {
        match task_id {
            STRESS => self.stress.is_some(),
            _ => self.score_label(task_id).is_some(),
        }
    }

    fn validate(&self, schema: &CorpusSchema) -> std::result::Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        if self.speaker_id.is_empty() {
            return Err(format!("{}: empty speaker_id", self.id));
        }
        if self.acoustic.len() != schema.acoustic_dim {
            return Err(format!(
                "{}: acoustic vector has {} dims, expected {}",
                self.id,
                self.acoustic.len(),
                schema.acoustic_dim
            ));
        }
        if self.acoustic.iter().any(|v| !v.is_finite()) {
            return Err(format!("{}: non-finite acoustic feature", self.id));
        }
        if self.stress.is_none() && self.activation.is_none() && self.valence.is_none() {
            return Err(format!("{}: no labels present", self.id));
        }
        if let Some(s) = self.stress {
            if s > 1 {
                return Err(format!("{}: stress label {s} not in {{0, 1}}", self.id));
            }
        }
        let (lo, hi) = schema.score_range;
        for (name, value) in [("activation", self.activation), ("valence", self.valence)] {
            if let Some(v) = value {
                if !v.is_finite() || v < lo || v > hi {
                    return Err(format!(
                        "{}: {name} score {v} outside declared range [{lo}, {hi}]",
                        self.id
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Declared shape of a corpus: acoustic dimensionality and the range of the
/// emotion scores (1-9 for the internal-style corpus, 0-1 external-style).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusSchema {
    pub acoustic_dim: usize,
    pub score_range: (f64, f64),
}

impl Default for CorpusSchema {
    fn default() -> Self {
        CorpusSchema {
            acoustic_dim: 88,
            score_range: (1.0, 9.0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub schema: CorpusSchema,
    examples: Vec<Example>,
}

impl Corpus {
    pub fn from_examples(examples: Vec<Example>, schema: CorpusSchema) -> Result<Self> {
        let mut issues = Vec::new();
        let mut seen = BTreeSet::new();
        for (i, ex) in examples.iter().enumerate() {
            if let Err(msg) = ex.validate(&schema) {
                issues.push(LineIssue { line: i + 1, message: msg });
            }
            if !ex.id.is_empty() && !seen.insert(ex.id.clone()) {
                issues.push(LineIssue {
                    line: i + 1,
                    message: format!("duplicate id {}", ex.id),
                });
            }
        }
        if !issues.is_empty() {
            return Err(CoreError::Load(issues));
        }
        Ok(Corpus { schema, examples })
    }

    /// Load a one-object-per-line JSONL corpus, reporting every malformed
    /// line with its line number.
    pub fn load_jsonl(path: &Path, schema: CorpusSchema) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let reader = std::io::BufReader::new(file);
        let mut examples = Vec::new();
        let mut issues = Vec::new();
        let mut seen = BTreeSet::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<Example>(&line) {
                Ok(ex) => {
                    if let Err(msg) = ex.validate(&schema) {
                        issues.push(LineIssue { line: i + 1, message: msg });
                    } else if !seen.insert(ex.id.clone()) {
                        issues.push(LineIssue {
                            line: i + 1,
                            message: format!("duplicate id {}", ex.id),
                        });
                    } else {
                        examples.push(ex);
                    }
                }
                Err(e) => issues.push(LineIssue { line: i + 1, message: e.to_string() }),
            }
        }
        if !issues.is_empty() {
            return Err(CoreError::Load(issues));
        }
        if examples.is_empty() {
            return Err(CoreError::Data(format!("{} contains no examples", path.display())));
        }
        Ok(Corpus { schema, examples })
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut writer = BufWriter::new(file);
        for ex in &self.examples {
            serde_json::to_writer(&mut writer, ex)
                .map_err(|e| CoreError::Data(format!("serialize {}: {e}", ex.id)))?;
            writer.write_all(b"\n")?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        self.examples
            .iter()
            .enumerate()
            .filter(|(_, ex)| ex.split == split)
            .map(|(i, _)| i)
            .collect()
    }

    /// Indices of examples in `split` that carry a label for `task_id`.
    pub fn labeled_indices(&self, split: Split, task_id: &str) -> Vec<usize> {
        self.examples
            .iter()
            .enumerate()
            .filter(|(_, ex)| ex.split == split && ex.has_task_label(task_id))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn has_labels(&self, split: Split, task_id: &str) -> bool {
        !self.labeled_indices(split, task_id).is_empty()
    }

    /// Canonical JSONL serialization hash; equal corpora hash equally.
    pub fn content_hash(&self) -> String {
        let mut buf = Vec::new();
        for ex in &self.examples {
            serde_json::to_writer(&mut buf, ex).expect("in-memory serialization");
            buf.push(b'\n');
        }
        crate::util::sha256_hex(&buf)
    }

    /// Consume into examples (used by normalization).
    pub fn into_examples(self) -> Vec<Example> {
        self.examples
    }
}
