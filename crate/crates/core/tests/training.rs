//! Training loop behaviour on tiny models.

mod common;

use std::fs;

use aben_core::checkpoint::{load_checkpoint, BackboneSpec, CheckpointManifest};
use aben_core::dataset::StandardizationStats;
use aben_core::dataset::RELATION_DIM;
use aben_core::nn::AdamConfig;
use aben_core::training::{train, EpochRecord, RunOutput, SamplingMode, TrainConfig};
use aben_core::AbenError;
use aben_metrics::SynonymTable;
use common::{rng, toy_model_sized, toy_scenes};

fn config(mode: SamplingMode, epochs: usize) -> TrainConfig {
    TrainConfig {
        optimizer: AdamConfig { lr: 1e-2, ..AdamConfig::default() },
        batch_size: 2,
        epochs,
        seed: 4,
        mode,
        clip_norm: Some(5.0),
        max_len: 6,
    }
}

fn manifest(model: &aben_core::model::AbenModel, vocab: &aben_core::tokenizer::SubwordVocabulary) -> CheckpointManifest {
    let stats = StandardizationStats { mean: vec![0.0; RELATION_DIM], std: vec![1.0; RELATION_DIM] };
    CheckpointManifest::new(model, vocab, BackboneSpec { channels: 4, input_side: 32, seed: 0 }, stats)
}

fn read_log(path: &std::path::Path) -> Vec<EpochRecord> {
    fs::read_to_string(path).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[test]
fn scheduled_sampling_epsilon_trace_is_logged() {
    let mut r = rng(1);
    let (vocab, scenes) = toy_scenes(&mut r, 2);
    let dir = tempfile::tempdir().unwrap();
    let mut model = toy_model_sized(1, vocab.len());
    let out = RunOutput { dir: dir.path(), manifest: manifest(&model, &vocab) };
    let cfg = config(SamplingMode::Ss, 100);
    train(&mut model, &scenes, &scenes[..1], &vocab, &SynonymTable::new(), &cfg, Some(out)).unwrap();
    let log = read_log(&dir.path().join("train_log.jsonl"));
    assert_eq!(log.len(), 100);
    for (e, rec) in log.iter().enumerate() {
        assert_eq!(rec.epoch, e);
        assert_eq!(rec.epsilon, (100 - e) as f64 / 100.0);
    }
    assert_eq!(log[0].epsilon, 1.0);
    assert_eq!(log[50].epsilon, 0.5);
    assert_eq!(log[99].epsilon, 0.01);
}

#[test]
fn teacher_forcing_keeps_epsilon_at_one() {
    let mut r = rng(2);
    let (vocab, scenes) = toy_scenes(&mut r, 3);
    let mut model = toy_model_sized(2, vocab.len());
    let outcome = train(&mut model, &scenes, &[], &vocab, &SynonymTable::new(), &config(SamplingMode::Tf, 6), None).unwrap();
    assert!(outcome.records.iter().all(|r| r.epsilon == 1.0));
    assert!(outcome.records.iter().all(|r| r.val_meteor.is_none() && r.val_loss.is_none()));
}

#[test]
fn runs_are_bit_identical() {
    let run = || {
        let mut r = rng(3);
        let (vocab, scenes) = toy_scenes(&mut r, 4);
        let mut model = toy_model_sized(3, vocab.len());
        let o = train(&mut model, &scenes, &scenes[..2], &vocab, &SynonymTable::new(), &config(SamplingMode::Ss, 5), None).unwrap();
        let bits: Vec<u64> = o.batch_losses.iter().map(|l| l.to_bits()).collect();
        (bits, model.decode(&scenes[0].features, 6).unwrap().ids)
    };
    assert_eq!(run(), run());
}

#[test]
fn loss_falls_on_a_fixed_batch() {
    let mut r = rng(5);
    let (vocab, scenes) = toy_scenes(&mut r, 4);
    let mut model = toy_model_sized(5, vocab.len());
    let o = train(&mut model, &scenes, &[], &vocab, &SynonymTable::new(), &config(SamplingMode::Tf, 40), None).unwrap();
    let first = o.records.first().unwrap().loss.total;
    let last = o.records.last().unwrap().loss.total;
    assert!(last < 0.5 * first, "{first} -> {last}");
}

#[test]
fn checkpoints_follow_best_meteor() {
    let mut r = rng(6);
    let (vocab, scenes) = toy_scenes(&mut r, 4);
    let dir = tempfile::tempdir().unwrap();
    let mut model = toy_model_sized(6, vocab.len());
    let out = RunOutput { dir: dir.path(), manifest: manifest(&model, &vocab) };
    let o = train(&mut model, &scenes, &scenes, &vocab, &SynonymTable::new(), &config(SamplingMode::Tf, 8), Some(out)).unwrap();
    let last = load_checkpoint(&dir.path().join("checkpoints/last")).unwrap();
    let best = load_checkpoint(&dir.path().join("checkpoints/best")).unwrap();
    assert_eq!(last.manifest.epoch, 7);
    assert_eq!(last.manifest.metric_trace.len(), 8);
    assert_eq!(best.manifest.epoch, o.best_epoch.unwrap());
    let trace: Vec<f64> = last.manifest.metric_trace.iter().map(|m| m.unwrap()).collect();
    let best_value = trace[o.best_epoch.unwrap()];
    assert!(trace.iter().all(|&m| m <= best_value));
    assert!(trace[..o.best_epoch.unwrap()].iter().all(|&m| m < best_value));
    // The final in-memory model is the last checkpoint.
    assert_eq!(last.model.decode(&scenes[1].features, 6).unwrap(), model.decode(&scenes[1].features, 6).unwrap());
}

#[test]
fn non_finite_loss_aborts_with_diagnostic() {
    let mut r = rng(7);
    let (vocab, scenes) = toy_scenes(&mut r, 2);
    let dir = tempfile::tempdir().unwrap();
    let mut model = toy_model_sized(7, vocab.len());
    let id = model.params.ids().find(|&id| model.params.name(id).starts_with("gen")).unwrap();
    model.params.get_mut(id).data_mut()[0] = f64::NAN;
    let out = RunOutput { dir: dir.path(), manifest: manifest(&model, &vocab) };
    let err = train(&mut model, &scenes, &[], &vocab, &SynonymTable::new(), &config(SamplingMode::Tf, 3), Some(out)).unwrap_err();
    assert!(matches!(err, AbenError::NonFiniteLoss { epoch: 0, batch: 0, .. }), "{err}");
    let diag: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("nonfinite_batch.json")).unwrap()).unwrap();
    assert_eq!(diag["epoch"], 0);
}

#[test]
fn empty_training_split_is_rejected() {
    let mut r = rng(8);
    let (vocab, _) = toy_scenes(&mut r, 2);
    let mut model = toy_model_sized(8, vocab.len());
    assert!(train(&mut model, &[], &[], &vocab, &SynonymTable::new(), &config(SamplingMode::Tf, 1), None).is_err());
}
