//! `muser evaluate`

use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};

use muser_core::data::{speaker_z_normalize, Corpus, CorpusSchema};
use muser_core::model::checkpoint;
use muser_core::train::evaluate_stress;

use super::parse_split;

pub fn run(
    checkpoint_path: &Path,
    corpus_path: &Path,
    split: &str,
    out: Option<&Path>,
) -> Result<()> {
    let split = parse_split(split)?;
    let model = checkpoint::load(checkpoint_path)
        .with_context(|| format!("loading {}", checkpoint_path.display()))?;

    // The checkpoint dictates the corpus shape it is compatible with.
    let score_range = model
        .tasks
        .iter()
        .find_map(|t| t.label_range)
        .unwrap_or((1.0, 9.0));
    let schema = CorpusSchema {
        acoustic_dim: model.config.acoustic_input_dim,
        score_range,
    };
    let corpus = Corpus::load_jsonl(corpus_path, schema)
        .with_context(|| format!("loading {}", corpus_path.display()))?;
    let (normalized, _, warnings) = speaker_z_normalize(&corpus)?;
    for w in warnings {
        eprintln!("warning: {w}");
    }

    let result = evaluate_stress(&model, &normalized, split)?;
    if result.tp + result.fp == 0 {
        eprintln!("warning: no predicted positives; precision reported as 0");
    }
    if result.tp + result.fn_ == 0 {
        eprintln!("warning: no positive examples in the split; recall reported as 0");
    }

    println!("split      {split:?}");
    println!("examples   {}", result.tp + result.fp + result.tn + result.fn_);
    println!("accuracy   {:.4}", result.accuracy);
    println!("precision  {:.4}", result.precision);
    println!("recall     {:.4}", result.recall);
    println!("f1         {:.4}", result.f1);
    println!(
        "confusion  tp {} fp {} tn {} fn {}",
        result.tp, result.fp, result.tn, result.fn_
    );

    if let Some(path) = out {
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)?;
        writeln!(file, "{}", serde_json::to_string(&result)?)?;
    }
    Ok(())
}
