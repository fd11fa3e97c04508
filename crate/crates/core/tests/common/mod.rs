#![allow(dead_code)]

use aben_core::dataset::{RelationalFeatures, RELATION_DIM};
use aben_core::encoder::{assemble_scene_encoding, SceneFeatures};
use aben_core::model::{AbenModel, ModelConfig};
use aben_core::nn::Tensor;
use aben_core::tokenizer::{EmbeddingTable, TokenSequence};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

pub const TOY_VOCAB: u32 = 12;

pub fn toy_config() -> ModelConfig {
    ModelConfig { channels: 4, hidden: 8, layers: 2, context: 3, embedding_dim: 6, fine_tune_embeddings: true, ..ModelConfig::default() }
}

pub fn toy_model(seed: u64) -> AbenModel {
    let cfg = toy_config();
    let emb = EmbeddingTable::random(TOY_VOCAB as usize, cfg.embedding_dim, 0.5, seed + 100);
    AbenModel::new(cfg, &emb, seed).unwrap()
}

pub fn random_features(rng: &mut ChaCha8Rng, channels: usize) -> SceneFeatures {
    let pooled = Tensor::from_vec(&[3, 3, channels], (0..9 * channels).map(|_| rng.random_range(0.0..1.0)).collect());
    let t: Vec<f64> = (0..channels).map(|_| rng.random_range(0.0..1.0)).collect();
    let s: Vec<f64> = (0..channels).map(|_| rng.random_range(0.0..1.0)).collect();
    let mut rel = [0.0; RELATION_DIM];
    rel.iter_mut().for_each(|v| *v = rng.random_range(-1.5..1.5));
    SceneFeatures { pooled_visual: pooled, encoding: assemble_scene_encoding(&t, &s, &RelationalFeatures { values: rel }).unwrap() }
}

/// Target subwords drawn from the non-special ids.
pub fn random_target(rng: &mut ChaCha8Rng, len: usize) -> TokenSequence {
    TokenSequence::new((0..len).map(|_| rng.random_range(4..TOY_VOCAB)).collect())
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn toy_model_sized(seed: u64, vocab_size: usize) -> AbenModel {
    let cfg = toy_config();
    let emb = EmbeddingTable::random(vocab_size, cfg.embedding_dim, 0.5, seed + 100);
    AbenModel::new(cfg, &emb, seed).unwrap()
}

const WORDS: [&str; 6] = ["red", "blue", "cup", "can", "left", "right"];

/// Small tokenized scenes with random features and three-word sentences.
pub fn toy_scenes(
    rng: &mut ChaCha8Rng,
    count: usize,
) -> (aben_core::tokenizer::SubwordVocabulary, Vec<aben_core::training::PreparedScene>) {
    let sentences: Vec<String> = (0..count)
        .map(|i| format!("{} {} {}", WORDS[i % 2], WORDS[2 + (i / 2) % 2], WORDS[4 + (i / 4) % 2]))
        .collect();
    let vocab = aben_core::tokenizer::SubwordVocabulary::build_from_corpus(&sentences, 50);
    let scenes = sentences
        .into_iter()
        .map(|s| aben_core::training::PreparedScene {
            features: random_features(rng, 4),
            targets: vec![vocab.tokenize(&s)],
            references: vec![s],
        })
        .collect();
    (vocab, scenes)
}
