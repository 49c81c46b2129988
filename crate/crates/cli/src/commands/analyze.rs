//! `muser analyze`

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};

use muser_core::analysis::{
    fit_linear, overlap_report, top_k_indicators, znormalize_columns, FitKind, IndicatorReport,
};
use muser_core::data::{speaker_z_normalize, Corpus, CorpusSchema, LexiconSpec};
use muser_core::task::{ACTIVATION, STRESS, VALENCE};

use super::parse_split;

struct FamilyFit {
    /// task -> full coefficient vector (feature order fixed per family).
    coefs: BTreeMap<String, Vec<f64>>,
    report: IndicatorReport,
    clipped: bool,
}

fn fit_family(
    rows: &[Vec<f64>],
    names: &[String],
    targets: &BTreeMap<String, Vec<f64>>,
    k: usize,
) -> Result<FamilyFit> {
    let mut per_task = BTreeMap::new();
    let mut coefs = BTreeMap::new();
    let mut clipped = false;
    for (task, ys) in targets {
        let kind = if task == STRESS {
            FitKind::Classification
        } else {
            FitKind::Regression
        };
        let w = fit_linear(rows, ys, kind)?;
        let (top, was_clipped) = top_k_indicators(&w, names, k)?;
        clipped |= was_clipped;
        per_task.insert(task.clone(), top);
        coefs.insert(task.clone(), w);
    }
    let report = overlap_report(per_task)?;
    Ok(FamilyFit { coefs, report, clipped })
}

fn render_text(family: &str, names: &[String], fit: &FamilyFit, out: &mut String) {
    let _ = writeln!(out, "== {family} indicators (|coefficient|, descending) ==");
    for (task, ranked) in &fit.report.per_task {
        let _ = writeln!(out, "\n[{task}] top {}", ranked.len());
        for (rank, (feature, coef)) in ranked.iter().enumerate() {
            let _ = writeln!(out, "  {:>2}. {feature:<24} {coef:+.6}", rank + 1);
        }
    }
    let _ = writeln!(
        out,
        "\nshared by all tasks ({}): {}",
        fit.report.intersection.len(),
        fit.report
            .intersection
            .iter()
            .cloned()
            .collect::<Vec<_>>()
            .join(", ")
    );
    for (task, unique) in &fit.report.unique {
        let _ = writeln!(
            out,
            "unique to {task} ({}): {}",
            unique.len(),
            unique.iter().cloned().collect::<Vec<_>>().join(", ")
        );
    }
    let _ = writeln!(out, "features considered: {}", names.len());
    if fit.clipped {
        let _ = writeln!(out, "note: k exceeded the feature count; all features listed");
    }
    let _ = writeln!(out);
}

fn render_csv(family: &str, fit: &FamilyFit, out: &mut String) {
    for (task, ranked) in &fit.report.per_task {
        for (rank, (feature, coef)) in ranked.iter().enumerate() {
            let _ = writeln!(out, "{family},{task},{},{feature},{coef}", rank + 1);
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn run(
    corpus_path: &Path,
    lexicon_path: &Path,
    k: usize,
    out: &Path,
    acoustic_dim: usize,
    score_range: (f64, f64),
    split: &str,
) -> Result<()> {
    let split = parse_split(split)?;
    let schema = CorpusSchema {
        acoustic_dim,
        score_range,
    };
    let corpus = Corpus::load_jsonl(corpus_path, schema)
        .with_context(|| format!("loading {}", corpus_path.display()))?;
    let lexicon = LexiconSpec::load_json(lexicon_path)?;

    let indices: Vec<usize> = corpus
        .split_indices(split)
        .into_iter()
        .filter(|&i| {
            let ex = &corpus.examples()[i];
            ex.stress.is_some() && ex.activation.is_some() && ex.valence.is_some()
        })
        .collect();
    if indices.is_empty() {
        bail!(muser_core::CoreError::Config(format!(
            "no {split:?} examples carry all three task labels"
        )));
    }

    let targets: BTreeMap<String, Vec<f64>> = [
        (STRESS, Box::new(|e: &muser_core::data::Example| e.stress.unwrap() as f64)
            as Box<dyn Fn(&muser_core::data::Example) -> f64>),
        (ACTIVATION, Box::new(|e| e.activation.unwrap())),
        (VALENCE, Box::new(|e| e.valence.unwrap())),
    ]
    .into_iter()
    .map(|(task, get)| {
        (
            task.to_string(),
            indices.iter().map(|&i| get(&corpus.examples()[i])).collect(),
        )
    })
    .collect();

    // Lexicon family: category counts, globally z-normalized.
    let lex_names = lexicon.category_names();
    let mut lex_rows: Vec<Vec<f64>> = indices
        .iter()
        .map(|&i| lexicon.count_features(&corpus.examples()[i].text))
        .collect();
    znormalize_columns(&mut lex_rows);
    let lex_fit = fit_family(&lex_rows, &lex_names, &targets, k)?;

    // Acoustic family: speaker-level z-normalization first, then the same
    // global per-feature z-normalization as the lexicon counts.
    let (normalized, _, warnings) = speaker_z_normalize(&corpus)?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    let ac_names: Vec<String> = (0..acoustic_dim).map(|i| format!("dim{i:03}")).collect();
    let mut ac_rows: Vec<Vec<f64>> = indices
        .iter()
        .map(|&i| normalized.examples()[i].acoustic.clone())
        .collect();
    znormalize_columns(&mut ac_rows);
    let ac_fit = fit_family(&ac_rows, &ac_names, &targets, k)?;

    std::fs::create_dir_all(out)?;
    let mut text = String::new();
    render_text("lexicon", &lex_names, &lex_fit, &mut text);
    render_text("acoustic", &ac_names, &ac_fit, &mut text);
    std::fs::write(out.join("report.txt"), &text)?;

    let mut csv = String::from("family,task,rank,feature,coefficient\n");
    render_csv("lexicon", &lex_fit, &mut csv);
    render_csv("acoustic", &ac_fit, &mut csv);
    std::fs::write(out.join("report.csv"), &csv)?;

    // Full coefficient dump for downstream tooling.
    let mut full = String::from("family,task,feature,coefficient\n");
    for (family, names, fit) in
        [("lexicon", &lex_names, &lex_fit), ("acoustic", &ac_names, &ac_fit)]
    {
        for (task, coefs) in &fit.coefs {
            for (name, coef) in names.iter().zip(coefs) {
                let _ = writeln!(full, "{family},{task},{name},{coef}");
            }
        }
    }
    std::fs::write(out.join("coefficients.csv"), &full)?;

    println!("{text}");
    println!("reports written to {}", out.display());
    Ok(())
}
