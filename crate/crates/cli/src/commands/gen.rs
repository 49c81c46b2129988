//! `muser gen-synthetic`

use std::path::Path;

use anyhow::{Context, Result};

use muser_core::data::{gen_synthetic, GenConfig, Split};
use muser_core::util;

pub fn run(config_path: &Path, out: &Path) -> Result<()> {
    let text = std::fs::read_to_string(config_path)
        .with_context(|| format!("reading {}", config_path.display()))?;
    let config: GenConfig =
        toml::from_str(&text).with_context(|| format!("parsing {}", config_path.display()))?;

    let (corpus, lexicon) = gen_synthetic(&config)?;
    std::fs::create_dir_all(out)?;
    let corpus_path = out.join("corpus.jsonl");
    let lexicon_path = out.join("lexicon.json");
    corpus.save_jsonl(&corpus_path)?;
    lexicon.save_json(&lexicon_path)?;

    let mut checksums = String::new();
    for path in [&corpus_path, &lexicon_path] {
        let digest = util::sha256_file(path)?;
        checksums.push_str(&format!(
            "{digest}  {}\n",
            path.file_name().unwrap().to_string_lossy()
        ));
    }
    std::fs::write(out.join("checksums.txt"), checksums)?;
    std::fs::write(
        out.join("resolved_gen.toml"),
        toml::to_string_pretty(&config).context("serializing generator config")?,
    )?;

    println!(
        "wrote {} examples (train {}, val {}, test {}) to {}",
        corpus.len(),
        corpus.split_indices(Split::Train).len(),
        corpus.split_indices(Split::Val).len(),
        corpus.split_indices(Split::Test).len(),
        corpus_path.display()
    );
    Ok(())
}
