//! End-to-end checks of the `muser` binary: every subcommand, artifact
//! shapes, determinism, and exit codes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn muser() -> Command {
    Command::new(env!("CARGO_BIN_EXE_muser"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = muser().args(args).output().expect("spawn muser");
    assert!(
        out.status.success(),
        "muser {args:?} failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn exit_code(args: &[&str]) -> i32 {
    muser()
        .args(args)
        .output()
        .expect("spawn muser")
        .status
        .code()
        .unwrap_or(-1)
}

fn write(path: &Path, content: &str) {
    std::fs::write(path, content).unwrap();
}

fn gen_corpus(dir: &Path, extra: &str) -> PathBuf {
    let cfg = dir.join("gen.toml");
    write(
        &cfg,
        &format!(
            "train = 60\nval = 20\ntest = 20\nspeakers = 5\nseed = 5\n{extra}"
        ),
    );
    let out = dir.join("data");
    run_ok(&[
        "gen-synthetic",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    out
}

#[test]
fn gen_synthetic_writes_expected_artifacts_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_corpus(dir.path(), "");
    for file in ["corpus.jsonl", "lexicon.json", "checksums.txt", "resolved_gen.toml"] {
        assert!(data.join(file).exists(), "{file} missing");
    }
    let checksums = std::fs::read_to_string(data.join("checksums.txt")).unwrap();

    // Re-run with the same seed into a fresh directory: identical checksums.
    let dir2 = tempfile::tempdir().unwrap();
    let data2 = gen_corpus(dir2.path(), "");
    let checksums2 = std::fs::read_to_string(data2.join("checksums.txt")).unwrap();
    assert_eq!(checksums, checksums2);
}

#[test]
fn gen_synthetic_rejects_invalid_correlation_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("gen.toml");
    write(&cfg, "rho_sa = 1.5\n");
    let out = muser()
        .args(["gen-synthetic", "--config", cfg.to_str().unwrap(), "--out"])
        .arg(dir.path().join("x"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("rho_sa"));
}

#[test]
fn missing_config_file_is_invalid_input() {
    let code = exit_code(&["gen-synthetic", "--config", "/nonexistent.toml", "--out", "/tmp/x"]);
    assert_eq!(code, 2);
}

fn train_config(dir: &Path, corpus: &Path, preset: &str, out: &Path) -> PathBuf {
    let cfg = dir.join("train.toml");
    write(
        &cfg,
        &format!(
            r#"preset = "{preset}"
corpus = "{}"
out = "{}"
seeds = [3]

[model]
text_layers = 1
text_heads = 2
text_hidden = 16
text_ff = 32
repr_dim = 16
acoustic_hidden = 16
acoustic_layers = 2
max_seq_len = 16

[train]
batch_size = 16
max_epochs = 4
history = 2
patience = 10
"#,
            corpus.display(),
            out.display()
        ),
    );
    cfg
}

#[test]
fn train_then_evaluate_matches_recorded_test_metrics_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_corpus(dir.path(), "");
    let corpus = data.join("corpus.jsonl");
    let run_dir = dir.path().join("run");
    let cfg = train_config(dir.path(), &corpus, "speed", &run_dir);
    run_ok(&["train", "--config", cfg.to_str().unwrap()]);

    for file in ["resolved.toml", "manifest.json", "results.jsonl"] {
        assert!(run_dir.join(file).exists(), "{file} missing");
    }
    let seed_dir = run_dir.join("seed_3");
    assert!(seed_dir.join("epochs.csv").exists());
    assert!(seed_dir.join("model.ckpt").exists());

    let record: serde_json::Value = serde_json::from_str(
        std::fs::read_to_string(run_dir.join("results.jsonl"))
            .unwrap()
            .lines()
            .next()
            .unwrap(),
    )
    .unwrap();

    let eval_out = dir.path().join("eval.jsonl");
    run_ok(&[
        "evaluate",
        "--checkpoint",
        seed_dir.join("model.ckpt").to_str().unwrap(),
        "--corpus",
        corpus.to_str().unwrap(),
        "--out",
        eval_out.to_str().unwrap(),
    ]);
    let eval: serde_json::Value =
        serde_json::from_str(std::fs::read_to_string(&eval_out).unwrap().lines().next().unwrap())
            .unwrap();
    for field in ["accuracy", "precision", "recall", "f1"] {
        assert_eq!(
            record["test"][field].as_f64().unwrap(),
            eval[field].as_f64().unwrap(),
            "{field} differs between train record and evaluate"
        );
    }
}

#[test]
fn evaluate_refuses_corpus_without_stress_labels() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_corpus(dir.path(), "");
    let run_dir = dir.path().join("run");
    let cfg = train_config(dir.path(), &data.join("corpus.jsonl"), "from-scratch", &run_dir);
    run_ok(&["train", "--config", cfg.to_str().unwrap()]);

    // A corpus whose examples carry only emotion scores.
    let no_stress = dir.path().join("nostress.jsonl");
    let mut lines = String::new();
    for i in 0..6 {
        lines.push_str(&format!(
            "{{\"id\":\"n{i}\",\"speaker_id\":\"s1\",\"text\":\"er hmm\",\"acoustic\":{:?},\"activation\":5.0,\"split\":\"{}\"}}\n",
            vec![0.0; 88],
            ["train", "val", "test"][i % 3],
        ));
    }
    write(&no_stress, &lines);
    let code = exit_code(&[
        "evaluate",
        "--checkpoint",
        run_dir.join("seed_3/model.ckpt").to_str().unwrap(),
        "--corpus",
        no_stress.to_str().unwrap(),
    ]);
    assert_eq!(code, 2);
}

#[test]
fn corrupt_checkpoint_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_corpus(dir.path(), "");
    let run_dir = dir.path().join("run");
    let cfg = train_config(dir.path(), &data.join("corpus.jsonl"), "from-scratch", &run_dir);
    run_ok(&["train", "--config", cfg.to_str().unwrap()]);
    let ckpt = run_dir.join("seed_3/model.ckpt");
    let mut bytes = std::fs::read(&ckpt).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x55;
    std::fs::write(&ckpt, bytes).unwrap();
    let out = muser()
        .args([
            "evaluate",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--corpus",
            data.join("corpus.jsonl").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("digest mismatch"));
}

#[test]
fn analyze_emits_reports_and_identical_labels_share_all_indicators() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_corpus(dir.path(), "");
    let out = dir.path().join("analysis");
    run_ok(&[
        "analyze",
        "--corpus",
        data.join("corpus.jsonl").to_str().unwrap(),
        "--lexicon",
        data.join("lexicon.json").to_str().unwrap(),
        "--k",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(out.join("report.txt").exists());
    let csv = std::fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(csv.lines().count() > 1);
    assert!(csv.starts_with("family,task,rank,feature,coefficient"));

    // Three identical label columns: the triple intersection is the full
    // top-k set for every family.
    let mut lines = String::new();
    for i in 0..60 {
        let stressed = i % 2 == 1;
        let text = if stressed { "er hmm umm sad" } else { "good day friend nice" };
        let score = if stressed { 8.0 } else { 2.0 };
        let mut acoustic = vec![0.0f64; 88];
        acoustic[0] = if stressed { 1.0 } else { -1.0 } + (i as f64) * 0.01;
        acoustic[1] = (i as f64 * 0.37).sin();
        lines.push_str(&format!(
            "{{\"id\":\"t{i}\",\"speaker_id\":\"s{}\",\"text\":\"{text}\",\"acoustic\":{acoustic:?},\"stress\":{},\"activation\":{score},\"valence\":{score},\"split\":\"train\"}}\n",
            i % 3,
            stressed as u8,
        ));
    }
    let twin = dir.path().join("twin.jsonl");
    write(&twin, &lines);
    let out2 = dir.path().join("analysis2");
    run_ok(&[
        "analyze",
        "--corpus",
        twin.to_str().unwrap(),
        "--lexicon",
        data.join("lexicon.json").to_str().unwrap(),
        "--k",
        "4",
        "--out",
        out2.to_str().unwrap(),
    ]);
    let text = std::fs::read_to_string(out2.join("report.txt")).unwrap();
    assert!(text.contains("shared by all tasks (4)"), "{text}");
}

#[test]
fn analyze_requires_all_three_labels() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_corpus(dir.path(), "");
    let partial = dir.path().join("partial.jsonl");
    write(
        &partial,
        &format!(
            "{{\"id\":\"p0\",\"speaker_id\":\"s1\",\"text\":\"er\",\"acoustic\":{:?},\"stress\":1,\"split\":\"train\"}}\n",
            vec![0.0; 88]
        ),
    );
    let code = exit_code(&[
        "analyze",
        "--corpus",
        partial.to_str().unwrap(),
        "--lexicon",
        data.join("lexicon.json").to_str().unwrap(),
        "--out",
        dir.path().join("a").to_str().unwrap(),
    ]);
    assert_eq!(code, 2);
}

#[test]
fn simulate_sampler_constant_trace_stays_uniform() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.jsonl");
    let mut lines = String::new();
    for epoch in 0..8 {
        lines.push_str(&format!(
            "{{\"epoch\":{epoch},\"scores\":{{\"stress\":0.7,\"activation\":1.1,\"valence\":1.1}}}}\n"
        ));
    }
    write(&trace, &lines);
    let out = run_ok(&[
        "simulate-sampler",
        "--trace",
        trace.to_str().unwrap(),
        "--strategy",
        "speed",
        "--history",
        "3",
    ]);
    let stdout = String::from_utf8(out.stdout).unwrap();
    let third = (1.0f64 / 3.0).to_string();
    for line in stdout.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        for p in &fields[4..7] {
            assert_eq!(*p, third, "line {line}");
        }
    }
}

#[test]
fn simulate_sampler_rejects_malformed_trace() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("bad.jsonl");
    write(&trace, "this is not json\n");
    let code = exit_code(&["simulate-sampler", "--trace", trace.to_str().unwrap()]);
    assert_eq!(code, 2);
}
