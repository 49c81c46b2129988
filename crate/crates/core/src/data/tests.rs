use std::collections::BTreeMap;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::batch::{draw_batch, BatchLabels, TaskPool};
use super::corpus::{Corpus, CorpusSchema, Example, Split};
use super::lexicon::LexiconSpec;
use super::normalize::speaker_z_normalize;
use super::synth::{gen_synthetic, GenConfig};
use crate::model::tokenizer::Tokenizer;
use crate::task::{TaskSpec, ACTIVATION, STRESS};

fn example(id: &str, speaker: &str, split: Split) -> Example {
    Example {
        id: id.into(),
        speaker_id: speaker.into(),
        text: "er hmm".into(),
        acoustic: vec![0.0; 4],
        stress: Some(1),
        activation: Some(5.0),
        valence: Some(5.0),
        split,
    }
}

fn small_schema() -> CorpusSchema {
    CorpusSchema {
        acoustic_dim: 4,
        score_range: (1.0, 9.0),
    }
}

fn write_jsonl(lines: &[&str]) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    for line in lines {
        writeln!(f, "{line}").unwrap();
    }
    f.flush().unwrap();
    f
}

#[test]
fn load_three_valid_lines() {
    let f = write_jsonl(&[
        r#"{"id":"a","speaker_id":"s1","text":"er","acoustic":[0,0,0,0],"stress":1,"split":"train"}"#,
        r#"{"id":"b","speaker_id":"s1","text":"hmm","acoustic":[0,0,0,0],"activation":3.5,"split":"val"}"#,
        r#"{"id":"c","speaker_id":"s2","text":"umm","acoustic":[0,0,0,0],"valence":8.0,"split":"test"}"#,
    ]);
    let corpus = Corpus::load_jsonl(f.path(), small_schema()).unwrap();
    assert_eq!(corpus.len(), 3);
    assert!(corpus.has_labels(Split::Train, STRESS));
    assert!(corpus.has_labels(Split::Val, ACTIVATION));
}

#[test]
fn out_of_range_score_is_rejected_with_line_number() {
    let f = write_jsonl(&[
        r#"{"id":"a","speaker_id":"s1","text":"er","acoustic":[0,0,0,0],"stress":1,"split":"train"}"#,
        r#"{"id":"b","speaker_id":"s1","text":"er","acoustic":[0,0,0,0],"activation":12.0,"split":"train"}"#,
    ]);
    let err = Corpus::load_jsonl(f.path(), small_schema()).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("line 2"), "{msg}");
    assert!(msg.contains("activation"), "{msg}");
}

#[test]
fn duplicate_id_is_rejected() {
    let f = write_jsonl(&[
        r#"{"id":"a","speaker_id":"s1","text":"er","acoustic":[0,0,0,0],"stress":1,"split":"train"}"#,
        r#"{"id":"a","speaker_id":"s1","text":"er","acoustic":[0,0,0,0],"stress":0,"split":"val"}"#,
    ]);
    let err = Corpus::load_jsonl(f.path(), small_schema()).unwrap_err();
    assert!(err.to_string().contains("duplicate id a"), "{err}");
}

#[test]
fn unlabeled_and_misshapen_examples_are_rejected() {
    let f = write_jsonl(&[
        r#"{"id":"a","speaker_id":"s1","text":"er","acoustic":[0,0,0,0],"split":"train"}"#,
        r#"{"id":"b","speaker_id":"s1","text":"er","acoustic":[0,0],"stress":1,"split":"train"}"#,
        r#"{"id":"c","speaker_id":"s1","text":"er","acoustic":[0,0,0,0],"stress":7,"split":"train"}"#,
        "not json at all",
    ]);
    let err = Corpus::load_jsonl(f.path(), small_schema()).unwrap_err();
    let msg = err.to_string();
    for needle in ["4 issue(s)", "line 1", "line 2", "line 3", "line 4"] {
        assert!(msg.contains(needle), "missing {needle} in {msg}");
    }
}

#[test]
fn jsonl_round_trip_preserves_content() {
    let (corpus, _) = gen_synthetic(&GenConfig {
        train: 20,
        val: 5,
        test: 5,
        speakers: 4,
        ..GenConfig::default()
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.jsonl");
    corpus.save_jsonl(&path).unwrap();
    let loaded = Corpus::load_jsonl(&path, corpus.schema).unwrap();
    assert_eq!(corpus.content_hash(), loaded.content_hash());
}

#[test]
fn speaker_normalization_matches_hand_values() {
    let mut examples = Vec::new();
    for (i, v) in [1.0, 2.0, 3.0].into_iter().enumerate() {
        let mut ex = example(&format!("e{i}"), "s1", Split::Train);
        ex.acoustic = vec![v, 7.5, v, 0.0]; // dim 1 constant, dim 3 constant zero
        examples.push(ex);
    }
    let corpus = Corpus::from_examples(examples, small_schema()).unwrap();
    let (normalized, _, warnings) = speaker_z_normalize(&corpus).unwrap();
    assert!(warnings.is_empty());
    // Population std of [1,2,3] is sqrt(2/3); (1-2)/sqrt(2/3) = -1.224744...
    let expect = 1.224_744_871_391_589;
    let rows: Vec<&[f64]> = normalized.examples().iter().map(|e| e.acoustic.as_slice()).collect();
    assert!((rows[0][0] + expect).abs() < 1e-12);
    assert!(rows[1][0].abs() < 1e-12);
    assert!((rows[2][0] - expect).abs() < 1e-12);
    // Constant features normalize to zero.
    assert!(rows.iter().all(|r| r[1] == 0.0 && r[3] == 0.0));
}

#[test]
fn normalization_yields_unit_train_moments_and_is_idempotent() {
    let (corpus, _) = gen_synthetic(&GenConfig {
        train: 300,
        val: 40,
        test: 40,
        speakers: 5,
        seed: 9,
        ..GenConfig::default()
    })
    .unwrap();
    let (normalized, _, warnings) = speaker_z_normalize(&corpus).unwrap();
    assert!(warnings.is_empty());

    // Oracle: recompute per-speaker train moments from scratch.
    let mut by_speaker: BTreeMap<&str, Vec<&[f64]>> = BTreeMap::new();
    for ex in normalized.examples() {
        if ex.split == Split::Train {
            by_speaker.entry(&ex.speaker_id).or_default().push(&ex.acoustic);
        }
    }
    for (speaker, rows) in by_speaker {
        let n = rows.len() as f64;
        for j in 0..normalized.schema.acoustic_dim {
            let mean: f64 = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            let var: f64 = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-9, "{speaker} dim {j} mean {mean}");
            assert!((var.sqrt() - 1.0).abs() < 1e-9, "{speaker} dim {j} std");
        }
    }

    let (twice, _, _) = speaker_z_normalize(&normalized).unwrap();
    for (a, b) in normalized.examples().iter().zip(twice.examples()) {
        for (x, y) in a.acoustic.iter().zip(&b.acoustic) {
            assert!((x - y).abs() < 1e-9);
        }
    }
}

#[test]
fn unseen_speaker_falls_back_to_global_stats_with_warning() {
    let mut examples = vec![
        example("a", "s1", Split::Train),
        example("b", "s1", Split::Train),
        example("c", "s2", Split::Val),
    ];
    examples[0].acoustic = vec![1.0, 0.0, 0.0, 0.0];
    examples[1].acoustic = vec![3.0, 0.0, 0.0, 0.0];
    examples[2].acoustic = vec![2.0, 0.0, 0.0, 0.0];
    let corpus = Corpus::from_examples(examples, small_schema()).unwrap();
    let (normalized, stats, warnings) = speaker_z_normalize(&corpus).unwrap();
    assert_eq!(warnings.len(), 1);
    assert!(warnings[0].contains("s2"), "{warnings:?}");
    // Global train stats: mean 2, std 1 -> val example maps to 0.
    assert_eq!(stats.global.0[0], 2.0);
    assert_eq!(normalized.examples()[2].acoustic[0], 0.0);
}

#[test]
fn lexicon_counts_match_examples() {
    let lex = LexiconSpec::new(BTreeMap::from([
        ("positive-emo".to_string(), vec!["love".into(), "nice".into(), "sweet".into()]),
        ("overlap".to_string(), vec!["love".into()]),
    ]))
    .unwrap();
    let names = lex.category_names();
    let counts = lex.count_features("love nice sweet");
    let by_name: BTreeMap<&str, f64> = names.iter().map(|n| n.as_str()).zip(counts).collect();
    assert_eq!(by_name["positive-emo"], 3.0);
    // A token in two categories increments both.
    assert_eq!(by_name["overlap"], 1.0);

    assert!(lex.count_features("").iter().all(|&c| c == 0.0));
}

#[test]
fn lexicon_rejects_empty_categories() {
    assert!(LexiconSpec::new(BTreeMap::new()).is_err());
    assert!(LexiconSpec::new(BTreeMap::from([("x".to_string(), vec![])])).is_err());
}

#[test]
fn synthetic_generation_is_seed_deterministic() {
    let cfg = GenConfig {
        train: 100,
        val: 20,
        test: 20,
        speakers: 5,
        ..GenConfig::default()
    };
    let (a, _) = gen_synthetic(&cfg).unwrap();
    let (b, _) = gen_synthetic(&cfg).unwrap();
    assert_eq!(a.content_hash(), b.content_hash());
    let (c, _) = gen_synthetic(&GenConfig { seed: 18, ..cfg }).unwrap();
    assert_ne!(a.content_hash(), c.content_hash());
}

fn stress_score_correlation(corpus: &Corpus, score: impl Fn(&Example) -> f64) -> f64 {
    let xs: Vec<f64> = corpus.examples().iter().map(|e| e.stress.unwrap() as f64).collect();
    let ys: Vec<f64> = corpus.examples().iter().map(&score).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / n;
    let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>() / n;
    let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum::<f64>() / n;
    cov / (vx * vy).sqrt()
}

#[test]
fn configured_correlation_is_realized_empirically() {
    let (corpus, _) = gen_synthetic(&GenConfig {
        train: 2000,
        val: 1,
        test: 1,
        speakers: 10,
        rho_sa: 0.8,
        rho_sv: 0.3,
        ..GenConfig::default()
    })
    .unwrap();
    let corr_a = stress_score_correlation(&corpus, |e| e.activation.unwrap());
    assert!((corr_a - 0.8).abs() < 0.1, "corr {corr_a}");
    let corr_v = stress_score_correlation(&corpus, |e| e.valence.unwrap());
    assert!((corr_v - 0.3).abs() < 0.1, "corr {corr_v}");
}

#[test]
fn zero_correlation_is_a_negative_control() {
    let (corpus, _) = gen_synthetic(&GenConfig {
        train: 2000,
        val: 1,
        test: 1,
        speakers: 10,
        rho_sa: 0.0,
        rho_sv: 0.0,
        ..GenConfig::default()
    })
    .unwrap();
    let corr = stress_score_correlation(&corpus, |e| e.activation.unwrap());
    assert!(corr.abs() < 0.06, "corr {corr}");
}

#[test]
fn label_marginals_and_ranges_hold() {
    let cfg = GenConfig {
        train: 1500,
        val: 100,
        test: 100,
        speakers: 10,
        ..GenConfig::default()
    };
    let (corpus, _) = gen_synthetic(&cfg).unwrap();
    assert_eq!(corpus.split_indices(Split::Train).len(), 1500);
    assert_eq!(corpus.split_indices(Split::Val).len(), 100);
    assert_eq!(corpus.split_indices(Split::Test).len(), 100);
    let n = corpus.len() as f64;
    let stressed: f64 = corpus.examples().iter().map(|e| e.stress.unwrap() as f64).sum();
    // Binomial(n, 0.5) 3-sigma bound on the stressed fraction.
    let sigma = 0.5 / n.sqrt();
    assert!((stressed / n - 0.5).abs() < 3.0 * sigma + 0.02, "fraction {}", stressed / n);
    for ex in corpus.examples() {
        let a = ex.activation.unwrap();
        assert!((1.0..=9.0).contains(&a));
    }
}

#[test]
fn invalid_correlation_is_a_configuration_error() {
    let err = gen_synthetic(&GenConfig {
        rho_sa: 1.5,
        ..GenConfig::default()
    })
    .unwrap_err();
    assert!(err.to_string().contains("rho_sa"), "{err}");
}

#[test]
fn nonfluency_tokens_are_oversampled_under_stress() {
    let (corpus, lexicon) = gen_synthetic(&GenConfig {
        train: 1500,
        val: 10,
        test: 10,
        speakers: 10,
        ..GenConfig::default()
    })
    .unwrap();
    let nf_index = lexicon
        .category_names()
        .iter()
        .position(|n| n == "nonfluency")
        .unwrap();
    let mut sums = [0.0f64; 2];
    let mut counts = [0usize; 2];
    for ex in corpus.examples() {
        let s = ex.stress.unwrap() as usize;
        sums[s] += lexicon.count_features(&ex.text)[nf_index];
        counts[s] += 1;
    }
    let mean_calm = sums[0] / counts[0] as f64;
    let mean_stressed = sums[1] / counts[1] as f64;
    assert!(mean_stressed > mean_calm + 0.5, "{mean_stressed} vs {mean_calm}");
}

#[test]
fn batches_have_requested_size_labels_and_are_reproducible() {
    let (corpus, _) = gen_synthetic(&GenConfig {
        train: 64,
        val: 8,
        test: 8,
        speakers: 4,
        ..GenConfig::default()
    })
    .unwrap();
    let tokenizer = Tokenizer::build(corpus.examples().iter().map(|e| e.text.as_str()), 1);
    let task = TaskSpec::classification(STRESS);
    let pool = TaskPool::new(&corpus, &task).unwrap();

    let draw = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        draw_batch(&corpus, &tokenizer, &pool, &task, 32, 128, &mut rng).unwrap()
    };
    let batch = draw(3);
    assert_eq!(batch.batch, 32);
    match &batch.labels {
        BatchLabels::Class(labels) => assert_eq!(labels.len(), 32),
        _ => panic!("classification batch carries class labels"),
    }
    // Trimmed to the longest real sequence, bounded by the generator's range.
    assert!(batch.seq <= 14, "seq {}", batch.seq);
    assert!(batch.mask.iter().any(|&m| m));

    let again = draw(3);
    assert_eq!(batch.tokens, again.tokens);
    assert_eq!(batch.acoustic.data(), again.acoustic.data());
}

#[test]
fn empty_task_pool_is_a_configuration_error() {
    let corpus = Corpus::from_examples(
        vec![example("a", "s1", Split::Train)],
        small_schema(),
    )
    .unwrap();
    // The lone example has all labels; strip activation by rebuilding.
    let mut ex = example("b", "s1", Split::Train);
    ex.activation = None;
    ex.valence = None;
    let corpus2 = Corpus::from_examples(vec![ex], small_schema()).unwrap();
    assert!(TaskPool::new(&corpus, &TaskSpec::classification(STRESS)).is_ok());
    assert!(TaskPool::new(&corpus2, &TaskSpec::regression(ACTIVATION, (1.0, 9.0))).is_err());
}
