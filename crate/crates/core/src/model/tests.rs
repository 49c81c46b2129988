use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::batch::{assemble_batch, BatchLabels};
use crate::data::synth::{gen_synthetic, GenConfig};
use crate::data::{Corpus, Split};
use crate::model::config::{Modality, ModelConfig};
use crate::model::muser::MuserModel;
use crate::model::tokenizer::Tokenizer;
use crate::model::checkpoint;
use crate::nn::gradcheck::{finite_difference_check, GradCheckConfig};
use crate::nn::tape::Tape;
use crate::optim::{AdamW, OptimConfig};
use crate::task::{default_tasks, TaskSpec, ACTIVATION, STRESS};

fn small_config() -> ModelConfig {
    ModelConfig {
        text_layers: 2,
        text_heads: 2,
        text_hidden: 16,
        text_ff: 32,
        repr_dim: 24,
        acoustic_input_dim: 88,
        acoustic_hidden: 24,
        acoustic_layers: 4,
        max_seq_len: 32,
        dropout: 0.1,
        vocab_size: 0,
    }
}

fn toy_corpus() -> Corpus {
    let (corpus, _) = gen_synthetic(&GenConfig {
        train: 40,
        val: 10,
        test: 10,
        speakers: 4,
        seed: 5,
        ..GenConfig::default()
    })
    .unwrap();
    corpus
}

fn toy_model(config: ModelConfig, modality: Modality, corpus: &Corpus) -> MuserModel {
    let tokenizer = Tokenizer::build(
        corpus
            .examples()
            .iter()
            .filter(|e| e.split == Split::Train)
            .map(|e| e.text.as_str()),
        2,
    );
    MuserModel::new(config, modality, default_tasks(corpus.schema.score_range), tokenizer, 3)
        .unwrap()
}

fn batch_for(model: &MuserModel, corpus: &Corpus, task: &str, n: usize) -> crate::data::Batch {
    let task_spec = model.task(task).unwrap().clone();
    let indices: Vec<usize> = corpus.labeled_indices(Split::Train, task)[..n].to_vec();
    assemble_batch(corpus, &model.tokenizer, &indices, &task_spec, model.config.max_seq_len)
        .unwrap()
}

#[test]
fn encode_text_is_deterministic_and_projects_to_repr_dim() {
    let corpus = toy_corpus();
    let model = toy_model(ModelConfig::default(), Modality::Multimodal, &corpus);
    let batch = batch_for(&model, &corpus, STRESS, 2);
    let run = || {
        let mut tape = Tape::new();
        let repr = model
            .encode_text(&mut tape, &batch.tokens, &batch.mask, batch.batch, batch.seq)
            .unwrap();
        tape.value(repr).data().to_vec()
    };
    let a = run();
    assert_eq!(a.len(), 2 * 256); // default repr_dim stays 256
    assert_eq!(a, run());
}

#[test]
fn encode_text_ignores_padding_content() {
    let corpus = toy_corpus();
    let model = toy_model(small_config(), Modality::Multimodal, &corpus);
    let mut batch = batch_for(&model, &corpus, STRESS, 3);
    let run = |b: &crate::data::Batch| {
        let mut tape = Tape::new();
        let repr = model
            .encode_text(&mut tape, &b.tokens, &b.mask, b.batch, b.seq)
            .unwrap();
        tape.value(repr).data().to_vec()
    };
    let before = run(&batch);
    // Overwrite a masked position's token id; outputs must not move.
    let masked_pos = batch.mask.iter().position(|m| !m).expect("batch has padding");
    batch.tokens[masked_pos] = 2;
    assert_eq!(before, run(&batch));
}

#[test]
fn encode_text_rejects_out_of_range_ids_and_long_sequences() {
    let corpus = toy_corpus();
    let model = toy_model(small_config(), Modality::Text, &corpus);
    let vocab = model.config.vocab_size as u32;
    let mut tape = Tape::new();
    assert!(model.encode_text(&mut tape, &[vocab], &[true], 1, 1).is_err());
    let too_long = model.config.max_seq_len + 1;
    let ids = vec![1u32; too_long];
    let mask = vec![true; too_long];
    assert!(model.encode_text(&mut tape, &ids, &mask, 1, too_long).is_err());
}

#[test]
fn encode_acoustic_zero_input_zero_biases_gives_zero() {
    let corpus = toy_corpus();
    let model = toy_model(small_config(), Modality::Acoustic, &corpus);
    let mut tape = Tape::new();
    let out = model
        .encode_acoustic(&mut tape, crate::Tensor::zeros(vec![2, 88]))
        .unwrap();
    assert!(tape.value(out).data().iter().all(|&v| v == 0.0));
    assert_eq!(tape.value(out).shape(), &[2, 24]);
}

#[test]
fn encode_acoustic_default_output_is_256_dim() {
    let corpus = toy_corpus();
    let model = toy_model(ModelConfig::default(), Modality::Acoustic, &corpus);
    let mut tape = Tape::new();
    let out = model
        .encode_acoustic(&mut tape, crate::Tensor::zeros(vec![1, 88]))
        .unwrap();
    assert_eq!(tape.value(out).shape(), &[1, 256]);
}

#[test]
fn encode_acoustic_rows_are_batch_independent() {
    let corpus = toy_corpus();
    let model = toy_model(small_config(), Modality::Acoustic, &corpus);
    let batch8 = batch_for(&model, &corpus, STRESS, 8);
    let row0: Vec<f64> = batch8.acoustic.data()[..88].to_vec();
    let mut tape = Tape::new();
    let out8 = model.encode_acoustic(&mut tape, batch8.acoustic.clone()).unwrap();
    let big_row = tape.value(out8).data()[..24].to_vec();
    let mut tape = Tape::new();
    let out1 = model
        .encode_acoustic(&mut tape, crate::Tensor::new(vec![1, 88], row0).unwrap())
        .unwrap();
    assert_eq!(tape.value(out1).data(), &big_row[..]);
}

#[test]
fn fused_width_and_head_shapes_follow_task_kind() {
    let corpus = toy_corpus();
    let model = toy_model(ModelConfig::default(), Modality::Multimodal, &corpus);
    // Concatenated 256 + 256 representation feeds a 512-wide head.
    let head_w = model.head_param_ids(STRESS).unwrap()[0];
    assert_eq!(model.store().node(head_w).value.shape(), &[512, 2]);
    let act_w = model.head_param_ids(ACTIVATION).unwrap()[0];
    assert_eq!(model.store().node(act_w).value.shape(), &[512, 1]);

    let model = toy_model(small_config(), Modality::Multimodal, &corpus);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let stress_batch = batch_for(&model, &corpus, STRESS, 4);
    let mut tape = Tape::new();
    let logits = model.predict(&mut tape, &stress_batch, STRESS, false, &mut rng).unwrap();
    assert_eq!(tape.value(logits).shape(), &[4, 2]);
    let act_batch = batch_for(&model, &corpus, ACTIVATION, 4);
    let mut tape = Tape::new();
    let score = model.predict(&mut tape, &act_batch, ACTIVATION, false, &mut rng).unwrap();
    assert_eq!(tape.value(score).shape(), &[4, 1]);
}

#[test]
fn evaluation_mode_is_dropout_free_and_repeatable() {
    let corpus = toy_corpus();
    let model = toy_model(small_config(), Modality::Multimodal, &corpus);
    let batch = batch_for(&model, &corpus, STRESS, 4);
    let run = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tape = Tape::new();
        let out = model.predict(&mut tape, &batch, STRESS, false, &mut rng).unwrap();
        tape.value(out).data().to_vec()
    };
    // Different rng seeds, identical eval outputs.
    assert_eq!(run(1), run(99));
}

#[test]
fn unimodal_heads_have_narrow_inputs() {
    let corpus = toy_corpus();
    let text_model = toy_model(ModelConfig::default(), Modality::Text, &corpus);
    let w = text_model.head_param_ids(STRESS).unwrap()[0];
    assert_eq!(text_model.store().node(w).value.shape(), &[256, 2]);

    let ac_model = toy_model(ModelConfig::default(), Modality::Acoustic, &corpus);
    let w = ac_model.head_param_ids(ACTIVATION).unwrap()[0];
    assert_eq!(ac_model.store().node(w).value.shape(), &[256, 1]);

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let batch = batch_for(&text_model, &corpus, STRESS, 3);
    let mut tape = Tape::new();
    let logits = text_model.predict(&mut tape, &batch, STRESS, false, &mut rng).unwrap();
    assert_eq!(tape.value(logits).shape(), &[3, 2]);
}

#[test]
fn unknown_task_is_a_configuration_error() {
    let corpus = toy_corpus();
    let model = toy_model(small_config(), Modality::Multimodal, &corpus);
    let batch = batch_for(&model, &corpus, STRESS, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut tape = Tape::new();
    assert!(model.predict(&mut tape, &batch, "nope", false, &mut rng).is_err());
}

#[test]
fn every_parameter_belongs_to_exactly_one_group() {
    let corpus = toy_corpus();
    for modality in [Modality::Text, Modality::Acoustic, Modality::Multimodal] {
        let model = toy_model(small_config(), modality, &corpus);
        model.audit_partition().unwrap();
        let shared = model.shared_param_ids().len();
        let heads: usize = model
            .tasks
            .iter()
            .map(|t| model.head_param_ids(&t.id).unwrap().len())
            .sum();
        assert_eq!(shared + heads, model.store().len());
    }
}

#[test]
fn one_step_touches_shared_and_active_head_only() {
    let corpus = toy_corpus();
    let mut model = toy_model(small_config(), Modality::Multimodal, &corpus);
    let batch = batch_for(&model, &corpus, STRESS, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut opt = AdamW::new(OptimConfig::default()).unwrap();

    let shared = model.shared_param_ids().to_vec();
    let stress_head = model.head_param_ids(STRESS).unwrap();
    let act_head = model.head_param_ids(ACTIVATION).unwrap();
    let val_head = model.head_param_ids("valence").unwrap();

    let before_act = model.store().checksum(&act_head);
    let before_val = model.store().checksum(&val_head);
    let before_shared = model.store().checksum(&shared);
    let before_stress = model.store().checksum(&stress_head);

    let mut tape = Tape::new();
    let loss = model.loss(&mut tape, &batch, STRESS, true, &mut rng).unwrap();
    tape.backward(loss).unwrap();
    tape.accumulate_param_grads(model.store_mut());
    let step_ids = model.step_param_ids(STRESS).unwrap();
    crate::optim::clip_global_norm(model.store_mut(), &step_ids, 1.0).unwrap();
    opt.step(model.store_mut(), &step_ids).unwrap();
    model.store_mut().zero_all_grads();

    assert_eq!(model.store().checksum(&act_head), before_act);
    assert_eq!(model.store().checksum(&val_head), before_val);
    assert_ne!(model.store().checksum(&shared), before_shared);
    assert_ne!(model.store().checksum(&stress_head), before_stress);
}

#[test]
fn gradient_reaches_both_encoders_through_fusion() {
    let corpus = toy_corpus();
    let mut model = toy_model(small_config(), Modality::Multimodal, &corpus);
    let batch = batch_for(&model, &corpus, STRESS, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut tape = Tape::new();
    let loss = model.loss(&mut tape, &batch, STRESS, false, &mut rng).unwrap();
    tape.backward(loss).unwrap();
    tape.accumulate_param_grads(model.store_mut());

    let group_norm = |model: &MuserModel, prefix: &str| {
        let mut sq = 0.0;
        for id in model.all_param_ids() {
            let node = model.store().node(id);
            if node.name.starts_with(prefix) {
                sq += node.grad.data().iter().map(|g| g * g).sum::<f64>();
            }
        }
        sq.sqrt()
    };
    assert!(group_norm(&model, "text.") > 0.0);
    assert!(group_norm(&model, "acoustic.") > 0.0);
}

#[test]
fn full_model_gradients_match_finite_differences() {
    let corpus = toy_corpus();
    let model = toy_model(small_config(), Modality::Multimodal, &corpus);
    let batch = batch_for(&model, &corpus, STRESS, 4);
    let ids = model.step_param_ids(STRESS).unwrap();
    let mut store = model.store().clone();
    let report = finite_difference_check(
        &mut store,
        &ids,
        |tape, store| {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            model.loss_in(store, tape, &batch, STRESS, false, &mut rng)
        },
        &GradCheckConfig {
            max_coords_per_param: Some(6),
            seed: 1,
            ..GradCheckConfig::default()
        },
    )
    .unwrap();
    assert!(report.max_rel_err < 1e-4, "rel err {}", report.max_rel_err);
}

#[test]
fn checkpoint_round_trips_bit_exactly() {
    let corpus = toy_corpus();
    let model = toy_model(small_config(), Modality::Multimodal, &corpus);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    checkpoint::save(&model, &path).unwrap();
    let loaded = checkpoint::load(&path).unwrap();

    assert_eq!(model.config, loaded.config);
    assert_eq!(model.tasks, loaded.tasks);
    assert_eq!(model.tokenizer, loaded.tokenizer);
    for id in model.all_param_ids() {
        let a = model.store().node(id);
        let b = loaded.store().node(id);
        assert_eq!(a.name, b.name);
        assert_eq!(a.value, b.value);
    }
    // Same forward outputs after reload.
    let batch = batch_for(&model, &corpus, STRESS, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut t1 = Tape::new();
    let o1 = model.predict(&mut t1, &batch, STRESS, false, &mut rng).unwrap();
    let mut t2 = Tape::new();
    let o2 = loaded.predict(&mut t2, &batch, STRESS, false, &mut rng).unwrap();
    assert_eq!(t1.value(o1).data(), t2.value(o2).data());
}

#[test]
fn corrupt_checkpoint_is_refused() {
    let corpus = toy_corpus();
    let model = toy_model(small_config(), Modality::Multimodal, &corpus);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    checkpoint::save(&model, &path).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0xff;
    std::fs::write(&path, bytes).unwrap();
    let err = checkpoint::load(&path).unwrap_err();
    assert!(err.to_string().contains("digest mismatch"), "{err}");
}

#[test]
fn regression_batch_loss_uses_mse() {
    let corpus = toy_corpus();
    let model = toy_model(small_config(), Modality::Multimodal, &corpus);
    let batch = batch_for(&model, &corpus, ACTIVATION, 4);
    assert!(matches!(batch.labels, BatchLabels::Score(_)));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut tape = Tape::new();
    let loss = model.loss(&mut tape, &batch, ACTIVATION, false, &mut rng).unwrap();
    assert!(tape.value(loss).item().unwrap() > 0.0);
}

#[test]
fn mismatched_labels_are_a_data_error() {
    let corpus = toy_corpus();
    let model = toy_model(small_config(), Modality::Multimodal, &corpus);
    let batch = batch_for(&model, &corpus, STRESS, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut tape = Tape::new();
    // Stress labels fed to the regression task.
    assert!(model.loss(&mut tape, &batch, ACTIVATION, false, &mut rng).is_err());
}

#[test]
fn paper_scale_configuration_is_expressible() {
    let cfg = ModelConfig {
        text_layers: 12,
        text_heads: 12,
        text_hidden: 768,
        text_ff: 3072,
        vocab_size: 0,
        ..ModelConfig::default()
    };
    let tokenizer = Tokenizer::build(["a b c"].into_iter(), 1);
    // Construction only; training at this scale is out of desk scope.
    let model = MuserModel::new(cfg, Modality::Text, vec![TaskSpec::classification(STRESS)], tokenizer, 0);
    assert!(model.is_ok());
}
