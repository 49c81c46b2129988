//! `muser`: experiment driver for multimodal stress detection with
//! emotion-recognition auxiliary tasks.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::Preset;

#[derive(Parser)]
#[command(
    name = "muser",
    version,
    about = "Multimodal stress detection: synthetic corpora, multi-task training with \
             speed-based dynamic sampling, evaluation, and indicator analysis"
)]
struct Cli {
    #[command(subcommand)]
    command: Commands,
}

#[derive(Subcommand)]
enum Commands {
    /// Generate a seeded synthetic stress/emotion corpus plus its lexicon.
    GenSynthetic {
        /// Generator TOML (sizes, speakers, correlations, seed).
        #[arg(long)]
        config: PathBuf,
        /// Output directory for corpus.jsonl, lexicon.json, checksums.txt.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model per the experiment config and write logs, checkpoints,
    /// and result records.
    Train {
        /// Experiment TOML.
        #[arg(long)]
        config: PathBuf,
        /// Override the config's preset.
        #[arg(long)]
        preset: Option<Preset>,
        /// Override the config's seed list (comma separated).
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Override the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a corpus split and print accuracy/P/R/F1.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Split to evaluate: train, val, or test.
        #[arg(long, default_value = "test")]
        split: String,
        /// Append the result as a JSON line to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit z-normalized linear indicator models for all three tasks and
    /// report ranked top-k coefficients with overlap counts.
    Analyze {
        #[arg(long)]
        corpus: PathBuf,
        /// Lexicon JSON (category -> word list).
        #[arg(long)]
        lexicon: PathBuf,
        /// Top-k cutoff for indicator sets.
        #[arg(long, default_value_t = 20)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 88)]
        acoustic_dim: usize,
        /// Declared emotion score range, e.g. "1,9".
        #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [1.0, 9.0])]
        score_range: Vec<f64>,
        /// Split to fit on.
        #[arg(long, default_value = "train")]
        split: String,
    },
    /// Replay sampling strategies over an injected per-epoch metric trace
    /// (no model) and emit the distribution sequence.
    SimulateSampler {
        /// Metric trace JSONL: row 0 is the initial validation.
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, default_value = "speed")]
        strategy: String,
        /// History length n (also the uniform warm-up span).
        #[arg(long, default_value_t = 5)]
        history: usize,
        #[arg(long, default_value_t = 0.1)]
        rho: f64,
        #[arg(long, default_value_t = 2.0)]
        loss_temp: f64,
        /// Write the distribution CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

impl clap::builder::ValueParserFactory for Preset {
    type Parser = clap::builder::ValueParser;
    fn value_parser() -> Self::Parser {
        clap::builder::ValueParser::new(|s: &str| s.parse::<Preset>().map_err(|e| e.to_string()))
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Commands::GenSynthetic { config, out } => commands::gen::run(&config, &out),
        Commands::Train {
            config,
            preset,
            seeds,
            out,
        } => commands::train::run(&config, preset, seeds, out),
        Commands::Evaluate {
            checkpoint,
            corpus,
            split,
            out,
        } => commands::evaluate::run(&checkpoint, &corpus, &split, out.as_deref()),
        Commands::Analyze {
            corpus,
            lexicon,
            k,
            out,
            acoustic_dim,
            score_range,
            split,
        } => commands::analyze::run(
            &corpus,
            &lexicon,
            k,
            &out,
            acoustic_dim,
            (score_range[0], score_range[1]),
            &split,
        ),
        Commands::SimulateSampler {
            trace,
            strategy,
            history,
            rho,
            loss_temp,
            out,
        } => commands::simulate::run(&trace, &strategy, history, rho, loss_temp, out.as_deref()),
    }
}

/// Exit 2 for invalid inputs/configuration, 1 for runtime failures.
fn classify(err: &anyhow::Error) -> u8 {
    use muser_core::CoreError;
    for cause in err.chain() {
        if let Some(core) = cause.downcast_ref::<CoreError>() {
            return match core {
                CoreError::Config(_)
                | CoreError::Data(_)
                | CoreError::Load(_)
                | CoreError::Precondition(_)
                | CoreError::Checkpoint(_) => 2,
                CoreError::Shape(_) | CoreError::Numeric(_) | CoreError::Io(_) => 1,
            };
        }
        if cause.downcast_ref::<toml::de::Error>().is_some()
            || cause.downcast_ref::<serde_json::Error>().is_some()
        {
            return 2;
        }
        // A path the user supplied does not exist: invalid input.
        if let Some(io) = cause.downcast_ref::<std::io::Error>() {
            if io.kind() == std::io::ErrorKind::NotFound {
                return 2;
            }
        }
        let text = cause.to_string();
        if text.starts_with("unknown preset") || text.contains("must be") {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(classify(&err))
        }
    }
}
