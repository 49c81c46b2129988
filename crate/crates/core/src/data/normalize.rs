//! Speaker-level z-normalization of acoustic features.
//!
//! Statistics (mean and population standard deviation, per speaker and per
//! feature dimension) come from the training split only and are applied to
//! every split. Speakers that never appear in the training split fall back
//! to the pooled training statistics, with a warning.

use std::collections::BTreeMap;

use crate::data::corpus::{Corpus, Split};
use crate::error::{CoreError, Result};

#[derive(Debug, Clone)]
pub struct SpeakerStats {
    /// speaker id -> (per-dim mean, per-dim population std).
    pub per_speaker: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
    /// Pooled training statistics for fallback speakers.
    pub global: (Vec<f64>, Vec<f64>),
}

fn moments(rows: &[&[f64]], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let mut mean = vec![0.0; dim];
    for row in rows {
        for (m, v) in mean.iter_mut().zip(*row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut var = vec![0.0; dim];
    for row in rows {
        for (j, v) in row.iter().enumerate() {
            var[j] += (v - mean[j]) * (v - mean[j]);
        }
    }
    let std = var.into_iter().map(|v| (v / n).sqrt()).collect();
    (mean, std)
}

/// Returns the normalized corpus, the statistics used, and any fallback
/// warnings.
pub fn speaker_z_normalize(corpus: &Corpus) -> Result<(Corpus, SpeakerStats, Vec<String>)> {
    let dim = corpus.schema.acoustic_dim;
    let mut train_rows: BTreeMap<&str, Vec<&[f64]>> = BTreeMap::new();
    let mut all_train: Vec<&[f64]> = Vec::new();
    for ex in corpus.examples() {
        if ex.split == Split::Train {
            train_rows.entry(&ex.speaker_id).or_default().push(&ex.acoustic);
            all_train.push(&ex.acoustic);
        }
    }
    if all_train.is_empty() {
        return Err(CoreError::Precondition(
            "speaker normalization needs a non-empty training split".into(),
        ));
    }

    let per_speaker: BTreeMap<String, (Vec<f64>, Vec<f64>)> = train_rows
        .iter()
        .map(|(spk, rows)| (spk.to_string(), moments(rows, dim)))
        .collect();
    let global = moments(&all_train, dim);

    let mut warnings = Vec::new();
    let mut examples = corpus.examples().to_vec();
    let mut warned: std::collections::BTreeSet<String> = Default::default();
    for ex in &mut examples {
        let (mean, std) = match per_speaker.get(&ex.speaker_id) {
            Some(stats) => stats,
            None => {
                if warned.insert(ex.speaker_id.clone()) {
                    warnings.push(format!(
                        "speaker {} absent from the training split; using global training statistics",
                        ex.speaker_id
                    ));
                }
                &global
            }
        };
        for (j, v) in ex.acoustic.iter_mut().enumerate() {
            // Constant features normalize to 0 rather than dividing by 0.
            *v = if std[j] == 0.0 { 0.0 } else { (*v - mean[j]) / std[j] };
        }
    }

    let normalized = Corpus::from_examples(examples, corpus.schema)?;
    Ok((
        normalized,
        SpeakerStats { per_speaker, global },
        warnings,
    ))
}
