//! Seeded synthetic stress/emotion corpus generator.
//!
//! Each example owns a latent affect variable. Stress is a thresholded noisy
//! copy of it; activation and valence are constructed so their point-biserial
//! correlation with the true stress state equals the configured `rho_sa` /
//! `rho_sv`. The transcript oversamples non-fluency tokens under stress (the
//! planted lexical indicator), and a handful of acoustic dimensions carry the
//! stress and emotion signals on top of per-speaker offsets that the
//! speaker-level z-normalization is expected to remove.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::data::corpus::{Corpus, CorpusSchema, Example, Split};
use crate::data::lexicon::LexiconSpec;
use crate::error::{CoreError, Result};

// Signal strengths; chosen so the main task is learnable but not saturated
// at the default corpus size, and so the strongest stress-relevant acoustic
// evidence flows through the emotion-aligned dimensions (which auxiliary
// supervision shapes directly).
const W_STRESS_ACOUSTIC: f64 = 0.28;
const W_EMOTION_ACOUSTIC: f64 = 0.28;
const STRESS_DIMS: std::ops::Range<usize> = 0..4;
const ACTIVATION_DIMS: std::ops::Range<usize> = 4..20;
const VALENCE_DIMS: std::ops::Range<usize> = 20..36;
/// How much of the score's private noise the acoustics encode (the
/// stress-linked component is always fully encoded). Below 1, a slice of
/// every emotion score is irreducible from audio, which caps how far the
/// auxiliary RMSE can fall.
const EMOTION_ENCODE_FRACTION: f64 = 0.65;
const SPEAKER_OFFSET_STD: f64 = 0.6;
const NONFLUENCY_BASE: f64 = 0.10;
const NONFLUENCY_STRESS_GAIN: f64 = 0.14;
/// Score-range clip point in latent standard deviations.
const SCORE_CLIP_SIGMA: f64 = 2.4;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub speakers: usize,
    /// Target correlation between stress and the activation score.
    pub rho_sa: f64,
    /// Target correlation between stress and the valence score.
    pub rho_sv: f64,
    /// Probability of flipping the observed stress label.
    pub stress_label_noise: f64,
    pub score_range: (f64, f64),
    pub acoustic_dim: usize,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            train: 2000,
            val: 200,
            test: 300,
            speakers: 20,
            rho_sa: 0.7,
            rho_sv: 0.7,
            stress_label_noise: 0.08,
            score_range: (1.0, 9.0),
            acoustic_dim: 88,
            seed: 17,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.train == 0 || self.val == 0 || self.test == 0 {
            return Err(CoreError::Config("split sizes must be >= 1".into()));
        }
        if self.speakers == 0 || self.train < self.speakers {
            return Err(CoreError::Config(
                "need at least one training example per speaker".into(),
            ));
        }
        for (name, rho) in [("rho_sa", self.rho_sa), ("rho_sv", self.rho_sv)] {
            if !(-1.0..=1.0).contains(&rho) {
                return Err(CoreError::Config(format!(
                    "{name} must be in [-1, 1], got {rho}"
                )));
            }
        }
        if !(0.0..0.5).contains(&self.stress_label_noise) {
            return Err(CoreError::Config("stress_label_noise must be in [0, 0.5)".into()));
        }
        if self.acoustic_dim < 36 {
            return Err(CoreError::Config(
                "acoustic_dim must be >= 36 (the informative dimension layout)".into(),
            ));
        }
        let (lo, hi) = self.score_range;
        if !(lo < hi) {
            return Err(CoreError::Config(format!("empty score range [{lo}, {hi}]")));
        }
        Ok(())
    }

    pub fn schema(&self) -> CorpusSchema {
        CorpusSchema {
            acoustic_dim: self.acoustic_dim,
            score_range: self.score_range,
        }
    }
}

/// The generator's word categories. `nonfluency` is the planted stress
/// indicator; `positive`/`negative` track valence and `money`/`time` track
/// activation; `social` and `body` are label-independent noise categories.
pub fn default_lexicon() -> LexiconSpec {
    let raw: BTreeMap<String, Vec<String>> = [
        ("nonfluency", vec!["er", "hmm", "umm", "uh", "erm", "mmm"]),
        ("positive", vec!["love", "nice", "sweet", "good", "happy", "glad"]),
        ("negative", vec!["sad", "angry", "hate", "cry", "bad", "upset"]),
        ("money", vec!["cash", "owe", "pay", "audit", "loan", "rent"]),
        ("time", vec!["now", "until", "end", "season", "day", "year"]),
        ("social", vec!["friend", "talk", "family", "people", "mate", "child"]),
        ("body", vec!["hand", "head", "eye", "pain", "blood", "cheek"]),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.into_iter().map(String::from).collect()))
    .collect();
    LexiconSpec::new(raw).expect("static lexicon is well-formed")
}

const FILLER: &[&str] = &[
    "the", "a", "i", "it", "was", "went", "really", "just", "thing", "stuff", "school", "class",
    "week", "very",
];

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

struct CategoryWords {
    nonfluency: Vec<String>,
    positive: Vec<String>,
    negative: Vec<String>,
    money: Vec<String>,
    time: Vec<String>,
    noise: Vec<String>,
}

fn pick<'a>(rng: &mut ChaCha8Rng, words: &'a [String]) -> &'a str {
    &words[rng.gen_range(0..words.len())]
}

fn gen_text(
    rng: &mut ChaCha8Rng,
    words: &CategoryWords,
    stressed: bool,
    a_std: f64,
    v_std: f64,
) -> String {
    let len = rng.gen_range(6..=14);
    let p_nf = NONFLUENCY_BASE + if stressed { NONFLUENCY_STRESS_GAIN } else { 0.0 };
    let mut tokens = Vec::with_capacity(len);
    for _ in 0..len {
        let u: f64 = rng.gen();
        let token = if u < p_nf {
            pick(rng, &words.nonfluency)
        } else if u < p_nf + 0.12 {
            if v_std + 0.8 * gauss(rng) > 0.0 {
                pick(rng, &words.positive)
            } else {
                pick(rng, &words.negative)
            }
        } else if u < p_nf + 0.22 {
            if a_std + 0.8 * gauss(rng) > 0.0 {
                pick(rng, &words.money)
            } else {
                pick(rng, &words.time)
            }
        } else if u < p_nf + 0.34 {
            pick(rng, &words.noise)
        } else {
            FILLER[rng.gen_range(0..FILLER.len())]
        };
        tokens.push(token.to_string());
    }
    tokens.join(" ")
}

/// Latent emotion with target point-biserial correlation `rho` against the
/// binary stress state. Returns the score value and the standardized
/// acoustically-encoded latent (the stress-linked part plus a shrunk share
/// of the score's private noise).
fn emotion_score(
    rng: &mut ChaCha8Rng,
    stressed: bool,
    rho: f64,
    range: (f64, f64),
) -> (f64, f64) {
    // raw = c * (2s - 1) + noise with c = rho / sqrt(1 - rho^2) yields
    // corr(s, raw) = rho exactly.
    let denom = (1.0 - rho * rho).max(1e-4).sqrt();
    let c = rho / denom;
    let sign = if stressed { 1.0 } else { -1.0 };
    let noise = gauss(rng);
    let raw = c * sign + noise;
    let std = raw / (c * c + 1.0).sqrt();
    let w = EMOTION_ENCODE_FRACTION;
    let fresh = gauss(rng);
    let encoded =
        (c * sign + w * noise + (1.0 - w * w).sqrt() * fresh) / (c * c + 1.0).sqrt();
    let (lo, hi) = range;
    let mid = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let score = (mid + half * std / SCORE_CLIP_SIGMA).clamp(lo, hi);
    (score, encoded)
}

/// Generate a deterministic synthetic corpus and the lexicon describing its
/// text categories.
pub fn gen_synthetic(config: &GenConfig) -> Result<(Corpus, LexiconSpec)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let lexicon = default_lexicon();

    let cat = |name: &str| lexicon.words(name).expect("known category");
    let mut noise_words = cat("social");
    noise_words.extend(cat("body"));
    let words = CategoryWords {
        nonfluency: cat("nonfluency"),
        positive: cat("positive"),
        negative: cat("negative"),
        money: cat("money"),
        time: cat("time"),
        noise: noise_words,
    };

    // Per-speaker acoustic offsets, removed later by z-normalization.
    let speaker_offsets: Vec<Vec<f64>> = (0..config.speakers)
        .map(|_| (0..config.acoustic_dim).map(|_| gauss(&mut rng) * SPEAKER_OFFSET_STD).collect())
        .collect();

    let total = config.train + config.val + config.test;
    let mut examples = Vec::with_capacity(total);
    for idx in 0..total {
        let split = if idx < config.train {
            Split::Train
        } else if idx < config.train + config.val {
            Split::Val
        } else {
            Split::Test
        };
        // The first examples cover every speaker so per-speaker training
        // statistics always exist.
        let speaker = if idx < config.speakers {
            idx
        } else {
            rng.gen_range(0..config.speakers)
        };

        let latent = gauss(&mut rng);
        let stressed = latent + 0.3 * gauss(&mut rng) > 0.0;
        let label = if rng.gen::<f64>() < config.stress_label_noise {
            !stressed
        } else {
            stressed
        };
        // The config declares the correlation against the observed (noisy)
        // label; compensate so label flips do not dilute it.
        let noise_factor = 1.0 - 2.0 * config.stress_label_noise;
        let rho_a = (config.rho_sa / noise_factor).clamp(-0.995, 0.995);
        let rho_v = (config.rho_sv / noise_factor).clamp(-0.995, 0.995);
        let (activation, a_std) = emotion_score(&mut rng, stressed, rho_a, config.score_range);
        let (valence, v_std) = emotion_score(&mut rng, stressed, rho_v, config.score_range);

        let text = gen_text(&mut rng, &words, stressed, a_std, v_std);

        let mut acoustic: Vec<f64> = (0..config.acoustic_dim)
            .map(|j| gauss(&mut rng) + speaker_offsets[speaker][j])
            .collect();
        let stress_signal = W_STRESS_ACOUSTIC * if stressed { 1.0 } else { -1.0 };
        for v in &mut acoustic[STRESS_DIMS] {
            *v += stress_signal;
        }
        for v in &mut acoustic[ACTIVATION_DIMS] {
            *v += W_EMOTION_ACOUSTIC * a_std;
        }
        for v in &mut acoustic[VALENCE_DIMS] {
            *v += W_EMOTION_ACOUSTIC * v_std;
        }

        examples.push(Example {
            id: format!("ex{idx:06}"),
            speaker_id: format!("spk{speaker:03}"),
            text,
            acoustic,
            stress: Some(label as u8),
            activation: Some(activation),
            valence: Some(valence),
            split,
        });
    }

    let corpus = Corpus::from_examples(examples, config.schema())?;
    Ok((corpus, lexicon))
}
