//! Trains a toy-sized model on 20 synthetic scenes and reports how well it
//! regenerates its own training sentences.
//!
//!     cargo run --release -p aben-core --example overfit_toy -- [epochs] [lr] [batch]

use std::time::Instant;

use aben_core::checkpoint::BackboneSpec;
use aben_core::dataset::{fit_standardizer, read_records};
use aben_core::model::{AbenModel, ModelConfig};
use aben_core::synthetic::{generate_synthetic, SyntheticConfig};
use aben_core::tokenizer::{EmbeddingTable, SubwordVocabulary, TokenSequence};
use aben_core::training::{prepare_scenes, train, SamplingMode, TrainConfig};
use aben_metrics::{bleu, tokenize, SynonymTable};

fn main() -> aben_core::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let epochs = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(300);
    let lr = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(3e-3);
    let batch = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(4);

    let dir = tempfile::tempdir().expect("temp dir");
    let records = generate_synthetic(dir.path(), SyntheticConfig::default())?;
    let (scenes, _) = read_records(&records)?;
    let rel: Vec<_> = scenes.iter().map(|s| s.relational_features()).collect::<Result<_, _>>()?;
    let stats = fit_standardizer(&rel)?;
    let sentences: Vec<&str> = scenes.iter().map(|s| s.references[0].as_str()).collect();
    let vocab = SubwordVocabulary::build_from_corpus(&sentences, 200);

    let config = ModelConfig { channels: 16, hidden: 64, context: 5, embedding_dim: 32, fine_tune_embeddings: true, ..ModelConfig::default() };
    let backbone = BackboneSpec { channels: 16, input_side: 224, seed: 0 }.build()?;
    let prepared = prepare_scenes(&scenes, &backbone, &stats, &vocab)?;
    let embeddings = EmbeddingTable::random(vocab.len(), config.embedding_dim, 0.5, 0);
    let mut model = AbenModel::new(config, &embeddings, 0)?;
    println!("vocab {} params {}", vocab.len(), model.parameter_count());

    let mut cfg = TrainConfig { batch_size: batch, epochs, mode: SamplingMode::Tf, ..TrainConfig::default() };
    cfg.optimizer.lr = lr;
    let start = Instant::now();
    let outcome = train(&mut model, &prepared, &[], &vocab, &SynonymTable::new(), &cfg, None)?;
    for r in outcome.records.iter().step_by((epochs / 10).max(1)) {
        println!("epoch {:4} L {:.4} (v {:.4} l {:.4} g {:.4})", r.epoch, r.loss.total, r.loss.loss_v, r.loss.loss_l, r.loss.loss_g);
    }
    println!("trained in {:.1}s", start.elapsed().as_secs_f64());

    let mut cands = Vec::new();
    let mut refs = Vec::new();
    let mut exact = 0;
    for (s, p) in scenes.iter().zip(&prepared) {
        let out = model.decode(&p.features, 30)?;
        let sentence = vocab.detokenize(&TokenSequence::new(out.ids));
        if sentence == s.references[0] {
            exact += 1;
        } else {
            println!("  want {:?}\n  got  {:?}", s.references[0], sentence);
        }
        cands.push(tokenize(&sentence));
        refs.push(vec![tokenize(&s.references[0])]);
    }
    println!("exact {exact}/{} BLEU-4 {:.4}", scenes.len(), bleu(&cands, &refs, 4).unwrap_or(0.0));
    Ok(())
}
