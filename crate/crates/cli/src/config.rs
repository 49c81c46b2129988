//! Run configuration files, presets, and the resolved-config snapshot.
//!
//! Configuration lives in TOML; command-line flags override file values; the
//! fully resolved snapshot is written into the output directory so every run
//! records exactly what produced it.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use muser_core::data::CorpusSchema;
use muser_core::model::{Modality, ModelConfig};
use muser_core::optim::OptimConfig;
use muser_core::sched::Strategy;
use muser_core::task::{ACTIVATION, VALENCE};
use muser_core::train::TrainConfig;
use muser_core::util;

/// Experiment presets named after the strategies they configure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    FromScratch,
    Activation100,
    Valence100,
    ActivationValenceStress,
    ValenceActivationStress,
    Uniform,
    Speed,
    Loss,
    UnimodalText,
    UnimodalAcoustic,
}

impl std::str::FromStr for Preset {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "from-scratch" => Preset::FromScratch,
            "activation-100" => Preset::Activation100,
            "valence-100" => Preset::Valence100,
            "activation-valence-stress" => Preset::ActivationValenceStress,
            "valence-activation-stress" => Preset::ValenceActivationStress,
            "uniform" => Preset::Uniform,
            "speed" => Preset::Speed,
            "loss" => Preset::Loss,
            "unimodal-text" => Preset::UnimodalText,
            "unimodal-acoustic" => Preset::UnimodalAcoustic,
            other => bail!(
                "unknown preset {other}; expected one of from-scratch, activation-100, \
                 valence-100, activation-valence-stress, valence-activation-stress, uniform, \
                 speed, loss, unimodal-text, unimodal-acoustic"
            ),
        })
    }
}

impl Preset {
    pub fn name(&self) -> &'static str {
        match self {
            Preset::FromScratch => "from-scratch",
            Preset::Activation100 => "activation-100",
            Preset::Valence100 => "valence-100",
            Preset::ActivationValenceStress => "activation-valence-stress",
            Preset::ValenceActivationStress => "valence-activation-stress",
            Preset::Uniform => "uniform",
            Preset::Speed => "speed",
            Preset::Loss => "loss",
            Preset::UnimodalText => "unimodal-text",
            Preset::UnimodalAcoustic => "unimodal-acoustic",
        }
    }

    pub fn modality(&self) -> Modality {
        match self {
            Preset::UnimodalText => Modality::Text,
            Preset::UnimodalAcoustic => Modality::Acoustic,
            _ => Modality::Multimodal,
        }
    }

    pub fn strategy(&self) -> Strategy {
        match self {
            Preset::Uniform => Strategy::Uniform,
            Preset::Speed => Strategy::Speed,
            Preset::Loss => Strategy::LossBased,
            _ => Strategy::SingleTask,
        }
    }

    /// Pre-training phases (task, epochs) before main-task fine-tuning.
    pub fn schedule(&self, phase_epochs: usize) -> Vec<(String, usize)> {
        match self {
            Preset::Activation100 => vec![(ACTIVATION.into(), phase_epochs)],
            Preset::Valence100 => vec![(VALENCE.into(), phase_epochs)],
            Preset::ActivationValenceStress => vec![
                (ACTIVATION.into(), phase_epochs),
                (VALENCE.into(), phase_epochs),
            ],
            Preset::ValenceActivationStress => vec![
                (VALENCE.into(), phase_epochs),
                (ACTIVATION.into(), phase_epochs),
            ],
            _ => vec![],
        }
    }

    /// Whether auxiliary tasks participate in one mixed training stage.
    pub fn is_multitask(&self) -> bool {
        matches!(self, Preset::Uniform | Preset::Speed | Preset::Loss)
    }

    /// Per-mode default learning rates (multimodal 3e-4, text 2e-5,
    /// acoustic 5e-4).
    pub fn default_lr(&self) -> f64 {
        match self {
            Preset::UnimodalText => 2e-5,
            Preset::UnimodalAcoustic => 5e-4,
            _ => 3e-4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemaToml {
    pub acoustic_dim: usize,
    pub score_range: (f64, f64),
}

impl Default for SchemaToml {
    fn default() -> Self {
        let s = CorpusSchema::default();
        SchemaToml {
            acoustic_dim: s.acoustic_dim,
            score_range: s.score_range,
        }
    }
}

impl From<SchemaToml> for CorpusSchema {
    fn from(s: SchemaToml) -> Self {
        CorpusSchema {
            acoustic_dim: s.acoustic_dim,
            score_range: s.score_range,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainToml {
    pub batch_size: usize,
    pub batches_per_epoch: Option<usize>,
    pub max_epochs: usize,
    pub history: usize,
    pub rho: f64,
    pub loss_temp: f64,
    pub patience: usize,
}

impl Default for TrainToml {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainToml {
            batch_size: t.batch_size,
            batches_per_epoch: t.batches_per_epoch,
            max_epochs: t.max_epochs,
            history: t.history,
            rho: t.rho,
            loss_temp: t.loss_temp,
            patience: t.patience,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimToml {
    /// Defaults to the preset's learning rate when unset.
    pub lr: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
}

impl Default for OptimToml {
    fn default() -> Self {
        let o = OptimConfig::default();
        OptimToml {
            lr: None,
            beta1: o.beta1,
            beta2: o.beta2,
            eps: o.eps,
            weight_decay: o.weight_decay,
            clip_norm: o.clip_norm,
        }
    }
}

/// The training experiment file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainFile {
    pub preset: String,
    pub corpus: PathBuf,
    /// External auxiliary corpus; auxiliary tasks draw from the main corpus
    /// when unset.
    pub aux_corpus: Option<PathBuf>,
    pub out: PathBuf,
    pub seeds: Vec<u64>,
    /// Epochs per pre-training phase for the pre-training presets.
    pub pretrain_epochs: usize,
    pub vocab_min_freq: usize,
    pub schema: SchemaToml,
    pub aux_schema: Option<SchemaToml>,
    pub model: ModelConfig,
    pub train: TrainToml,
    pub optim: OptimToml,
}

impl Default for TrainFile {
    fn default() -> Self {
        TrainFile {
            preset: "speed".into(),
            corpus: PathBuf::from("corpus.jsonl"),
            aux_corpus: None,
            out: PathBuf::from("runs/out"),
            seeds: vec![1],
            pretrain_epochs: 100,
            vocab_min_freq: 2,
            schema: SchemaToml::default(),
            aux_schema: None,
            model: ModelConfig::default(),
            train: TrainToml::default(),
            optim: OptimToml::default(),
        }
    }
}

impl TrainFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?;
        let file: TrainFile =
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        Ok(file)
    }
}

/// Everything a run needs, after merging file values, flag overrides, and
/// preset defaults.
#[derive(Debug, Clone, Serialize)]
pub struct ResolvedTrain {
    pub preset: Preset,
    pub preset_name: String,
    pub corpus: PathBuf,
    pub corpus_sha256: String,
    pub aux_corpus: Option<PathBuf>,
    pub aux_corpus_sha256: Option<String>,
    pub out: PathBuf,
    pub seeds: Vec<u64>,
    pub pretrain_epochs: usize,
    pub vocab_min_freq: usize,
    pub schema: SchemaToml,
    pub aux_schema: SchemaToml,
    pub model: ModelConfig,
    pub train: TrainToml,
    pub optim: OptimConfig,
}

impl ResolvedTrain {
    pub fn resolve(
        file: TrainFile,
        preset_flag: Option<Preset>,
        seeds_flag: Option<Vec<u64>>,
        out_flag: Option<PathBuf>,
    ) -> Result<Self> {
        let preset = match preset_flag {
            Some(p) => p,
            None => file.preset.parse()?,
        };
        let seeds = seeds_flag.unwrap_or_else(|| file.seeds.clone());
        if seeds.is_empty() {
            bail!("at least one seed is required");
        }
        let out = out_flag.unwrap_or_else(|| file.out.clone());
        let corpus_sha256 = util::sha256_file(&file.corpus)
            .with_context(|| format!("hashing {}", file.corpus.display()))?;
        let aux_corpus_sha256 = match &file.aux_corpus {
            Some(p) => {
                Some(util::sha256_file(p).with_context(|| format!("hashing {}", p.display()))?)
            }
            None => None,
        };
        let optim = OptimConfig {
            lr: file.optim.lr.unwrap_or_else(|| preset.default_lr()),
            beta1: file.optim.beta1,
            beta2: file.optim.beta2,
            eps: file.optim.eps,
            weight_decay: file.optim.weight_decay,
            clip_norm: file.optim.clip_norm,
        };
        Ok(ResolvedTrain {
            preset,
            preset_name: preset.name().to_string(),
            corpus: file.corpus,
            corpus_sha256,
            aux_corpus: file.aux_corpus,
            aux_corpus_sha256,
            out,
            seeds,
            pretrain_epochs: file.pretrain_epochs,
            vocab_min_freq: file.vocab_min_freq,
            aux_schema: file.aux_schema.clone().unwrap_or_else(|| file.schema.clone()),
            schema: file.schema,
            model: file.model,
            train: file.train,
            optim,
        })
    }

    /// Training configuration for one seed.
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: self.train.batch_size,
            batches_per_epoch: self.train.batches_per_epoch,
            max_epochs: self.train.max_epochs,
            strategy: self.preset.strategy(),
            history: self.train.history,
            rho: self.train.rho,
            loss_temp: self.train.loss_temp,
            seed,
            optim: self.optim,
            patience: self.train.patience,
        }
    }

    /// Hash identifying the semantic configuration: everything that shapes
    /// the result except seeds and output/corpus paths (corpus content is
    /// represented by its checksum).
    pub fn config_hash(&self) -> String {
        #[derive(Serialize)]
        struct Hashed<'a> {
            preset: &'a str,
            corpus_sha256: &'a str,
            aux_corpus_sha256: Option<&'a str>,
            pretrain_epochs: usize,
            vocab_min_freq: usize,
            schema: &'a SchemaToml,
            aux_schema: &'a SchemaToml,
            model: &'a ModelConfig,
            train: &'a TrainToml,
            optim: &'a OptimConfig,
        }
        let canonical = serde_json::to_vec(&Hashed {
            preset: self.preset.name(),
            corpus_sha256: &self.corpus_sha256,
            aux_corpus_sha256: self.aux_corpus_sha256.as_deref(),
            pretrain_epochs: self.pretrain_epochs,
            vocab_min_freq: self.vocab_min_freq,
            schema: &self.schema,
            aux_schema: &self.aux_schema,
            model: &self.model,
            train: &self.train,
            optim: &self.optim,
        })
        .expect("in-memory serialization");
        util::sha256_hex(&canonical)
    }

    pub fn snapshot_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).context("serializing resolved config")
    }
}
