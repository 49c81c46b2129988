//! `muser train`

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use muser_core::data::{speaker_z_normalize, Corpus, Split};
use muser_core::model::{checkpoint, MuserModel, Tokenizer};
use muser_core::task::{TaskSpec, ACTIVATION, STRESS, VALENCE};
use muser_core::train::{
    epoch_csv_string, multitask_train, pretrain_then_finetune, ResultRecord, RunOutput,
    TaskBinding,
};

use crate::config::{Preset, ResolvedTrain, TrainFile};

#[derive(Serialize)]
struct Manifest<'a> {
    config_hash: &'a str,
    preset: &'a str,
    corpus: &'a Path,
    corpus_sha256: &'a str,
    aux_corpus: Option<&'a Path>,
    aux_corpus_sha256: Option<&'a str>,
    seeds: &'a [u64],
}

fn load_normalized(path: &Path, schema: muser_core::data::CorpusSchema) -> Result<Corpus> {
    let corpus = Corpus::load_jsonl(path, schema)
        .with_context(|| format!("loading {}", path.display()))?;
    let (normalized, _, warnings) = speaker_z_normalize(&corpus)?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    Ok(normalized)
}

fn tasks_for(resolved: &ResolvedTrain) -> Vec<TaskSpec> {
    let aux_range = resolved.aux_schema.score_range;
    let stress = TaskSpec::classification(STRESS);
    let activation = TaskSpec::regression(ACTIVATION, aux_range);
    let valence = TaskSpec::regression(VALENCE, aux_range);
    match resolved.preset {
        Preset::FromScratch | Preset::UnimodalText | Preset::UnimodalAcoustic => vec![stress],
        Preset::Activation100 => vec![stress, activation],
        Preset::Valence100 => vec![stress, valence],
        _ => vec![stress, activation, valence],
    }
}

pub fn run(
    config_path: &Path,
    preset_flag: Option<Preset>,
    seeds_flag: Option<Vec<u64>>,
    out_flag: Option<PathBuf>,
) -> Result<()> {
    let file = TrainFile::load(config_path)?;
    let resolved = ResolvedTrain::resolve(file, preset_flag, seeds_flag, out_flag)?;
    let config_hash = resolved.config_hash();

    let main_corpus = load_normalized(&resolved.corpus, resolved.schema.clone().into())?;
    let aux_corpus = match &resolved.aux_corpus {
        Some(path) => Some(load_normalized(path, resolved.aux_schema.clone().into())?),
        None => None,
    };

    std::fs::create_dir_all(&resolved.out)?;
    std::fs::write(resolved.out.join("resolved.toml"), resolved.snapshot_toml()?)?;
    let manifest = Manifest {
        config_hash: &config_hash,
        preset: resolved.preset.name(),
        corpus: &resolved.corpus,
        corpus_sha256: &resolved.corpus_sha256,
        aux_corpus: resolved.aux_corpus.as_deref(),
        aux_corpus_sha256: resolved.aux_corpus_sha256.as_deref(),
        seeds: &resolved.seeds,
    };
    std::fs::write(
        resolved.out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;

    let tasks = tasks_for(&resolved);
    // Vocabulary from every bound corpus's training split.
    let aux_texts = aux_corpus.iter().flat_map(|c| c.examples().iter());
    let tokenizer = Tokenizer::build(
        main_corpus
            .examples()
            .iter()
            .chain(aux_texts)
            .filter(|e| e.split == Split::Train)
            .map(|e| e.text.as_str()),
        resolved.vocab_min_freq,
    );

    let results_path = resolved.out.join("results.jsonl");
    let mut results = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&results_path)?;

    for &seed in &resolved.seeds {
        let mut model = MuserModel::new(
            resolved.model,
            resolved.preset.modality(),
            tasks.clone(),
            tokenizer.clone(),
            seed,
        )?;
        let bindings: Vec<TaskBinding> = tasks
            .iter()
            .map(|task| {
                let corpus = if task.id == STRESS {
                    &main_corpus
                } else {
                    aux_corpus.as_ref().unwrap_or(&main_corpus)
                };
                TaskBinding {
                    task: task.clone(),
                    corpus,
                }
            })
            .collect();
        let train_config = resolved.train_config(seed);
        let output: RunOutput = if resolved.preset.is_multitask() {
            multitask_train(&mut model, &bindings, &train_config)?
        } else {
            let schedule = resolved.preset.schedule(resolved.pretrain_epochs);
            pretrain_then_finetune(&mut model, &schedule, &bindings, &train_config)?
        };

        let seed_dir = resolved.out.join(format!("seed_{seed}"));
        std::fs::create_dir_all(&seed_dir)?;
        let task_order: Vec<String> = tasks.iter().map(|t| t.id.clone()).collect();
        std::fs::write(
            seed_dir.join("epochs.csv"),
            epoch_csv_string(&task_order, &output.reports),
        )?;
        checkpoint::save(&model, &seed_dir.join("model.ckpt"))?;

        let record = ResultRecord {
            config_hash: config_hash.clone(),
            preset: resolved.preset.name().to_string(),
            seed,
            best_epoch: output.best_epoch,
            epochs_run: output.epochs_run,
            test: output.test,
        };
        writeln!(results, "{}", record.to_json_line())?;

        let wall: f64 = output
            .reports
            .iter()
            .map(|r| r.wall_time.as_secs_f64())
            .sum();
        println!(
            "seed {seed}: best epoch {} (val {:.4}), ran {} epochs in {:.1}s; \
             test acc {:.4} P {:.4} R {:.4} F1 {:.4}",
            output.best_epoch,
            output.best_val,
            output.epochs_run,
            wall,
            output.test.accuracy,
            output.test.precision,
            output.test.recall,
            output.test.f1,
        );
    }
    println!("results appended to {}", results_path.display());
    Ok(())
}
