//! End-to-end operations behind the command-line tool.

use std::fs;
use std::path::{Path, PathBuf};

use aben_metrics::{evaluate_corpus, tokenize, MetricReport, SynonymTable, Tokens};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_checkpoint, BackboneSpec, CheckpointManifest};
use crate::config::RunConfig;
use crate::dataset::{load_dataset, read_records, split_scenes, write_records, DatasetSplit, SceneSample, SplitRatios, ValidationSummary};
use crate::error::{AbenError, Result};
use crate::inference::{generate_sentence, Pipeline};
use crate::model::AbenModel;
use crate::tokenizer::{load_vocab_and_embeddings, EmbeddingTable, SubwordVocabulary};
use crate::training::{prepare_scenes, train, RunOutput, TrainOutcome};

pub const RUN_MANIFEST: &str = "manifest.json";
pub const CONFIG_COPY: &str = "config.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Validation,
    Test,
}

impl std::str::FromStr for SplitName {
    type Err = AbenError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Self::Train),
            "validation" | "val" => Ok(Self::Validation),
            "test" => Ok(Self::Test),
            other => Err(AbenError::Config(format!("unknown split `{other}`"))),
        }
    }
}

impl SplitName {
    pub fn select(self, split: &DatasetSplit) -> &[SceneSample] {
        match self {
            Self::Train => &split.train,
            Self::Validation => &split.validation,
            Self::Test => &split.test,
        }
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| AbenError::Config(e.to_string()))?;
    fs::write(path, text).map_err(|e| AbenError::io(path, e))
}

fn absolute_images(scenes: &mut [SceneSample]) {
    for s in scenes {
        if let Ok(p) = fs::canonicalize(&s.image_path) {
            s.image_path = p;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepareReport {
    pub validation: ValidationSummary,
    pub scenes: [usize; 3],
    pub pairs: [usize; 3],
    pub ratios: SplitRatios,
    pub seed: u64,
}

/// Validates a record file, splits it by image and writes
/// `train.jsonl`, `validation.jsonl`, `test.jsonl`, `standardization.json`,
/// `validation_report.json` and `manifest.json` into `out`.
pub fn prepare_data(input: &Path, out: &Path, ratios: SplitRatios, seed: u64) -> Result<PrepareReport> {
    let (scenes, summary) = read_records(input)?;
    fs::create_dir_all(out).map_err(|e| AbenError::io(out, e))?;
    write_json(&out.join("validation_report.json"), &summary)?;
    if !summary.is_clean() {
        return Ok(PrepareReport { validation: summary, scenes: [0; 3], pairs: [0; 3], ratios, seed });
    }
    let mut split = split_scenes(scenes, ratios, seed)?;
    for part in [&mut split.train, &mut split.validation, &mut split.test] {
        absolute_images(part);
    }
    write_records(&out.join("train.jsonl"), &split.train)?;
    write_records(&out.join("validation.jsonl"), &split.validation)?;
    write_records(&out.join("test.jsonl"), &split.test)?;
    write_json(&out.join("standardization.json"), &split.standardization_stats)?;
    let count = |s: &[SceneSample]| s.iter().map(|x| x.references.len()).sum::<usize>();
    let report = PrepareReport {
        validation: summary,
        scenes: [split.train.len(), split.validation.len(), split.test.len()],
        pairs: [count(&split.train), count(&split.validation), count(&split.test)],
        ratios,
        seed,
    };
    write_json(
        &out.join(RUN_MANIFEST),
        &serde_json::json!({
            "command": "prepare-data",
            "input": input.display().to_string(),
            "ratios": ratios,
            "seed": seed,
            "scenes": report.scenes,
            "pairs": report.pairs,
            "files": ["train.jsonl", "validation.jsonl", "test.jsonl", "standardization.json", "validation_report.json"],
        }),
    )?;
    Ok(report)
}

/// Loads the configured vocabulary and embeddings, or builds a vocabulary
/// from the training sentences with a seeded random embedding table.
pub fn vocabulary_for(cfg: &RunConfig, split: &DatasetSplit) -> Result<(SubwordVocabulary, EmbeddingTable)> {
    if let (Some(v), Some(e)) = (&cfg.data.vocab, &cfg.data.embeddings) {
        return load_vocab_and_embeddings(v, e);
    }
    let sentences: Vec<&str> = split.train.iter().flat_map(|s| s.references.iter().map(String::as_str)).collect();
    let vocab = SubwordVocabulary::build_from_corpus(&sentences, cfg.data.vocab_top_k);
    let table = EmbeddingTable::random(vocab.len(), cfg.model.embedding_dim, cfg.data.embedding_std, cfg.data.embedding_seed);
    Ok((vocab, table))
}

pub fn load_synonyms(path: Option<&Path>) -> Result<SynonymTable> {
    Ok(match path {
        Some(p) => SynonymTable::load(p)?,
        None => SynonymTable::new(),
    })
}

pub fn load_split(cfg: &RunConfig) -> Result<DatasetSplit> {
    let (split, summary) = load_dataset(&cfg.data.input, cfg.data.ratios, cfg.data.split_seed)?;
    for r in &summary.rejected {
        log::warn!("skipping record on line {}: {}", r.line, r.reason);
    }
    Ok(split)
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub run_dir: PathBuf,
    pub outcome: TrainOutcome,
    pub model: AbenModel,
    pub vocab: SubwordVocabulary,
}

/// Trains from a validated config, writing everything under
/// `cfg.output_dir`.
pub fn run_training(cfg: &RunConfig) -> Result<TrainRun> {
    cfg.validate()?;
    let split = load_split(cfg)?;
    let (vocab, embeddings) = vocabulary_for(cfg, &split)?;
    let spec = BackboneSpec { channels: cfg.model.channels, input_side: cfg.model.image_side, seed: cfg.backbone_seed };
    let backbone = spec.build()?;
    let synonyms = load_synonyms(cfg.data.synonyms.as_deref())?;
    log::info!("encoding {} training and {} validation scenes", split.train.len(), split.validation.len());
    let train_set = prepare_scenes(&split.train, &backbone, &split.standardization_stats, &vocab)?;
    let val_set = prepare_scenes(&split.validation, &backbone, &split.standardization_stats, &vocab)?;
    let mut model = AbenModel::new(cfg.model.clone(), &embeddings, cfg.training.seed)?;

    let dir = cfg.output_dir.clone();
    fs::create_dir_all(&dir).map_err(|e| AbenError::io(&dir, e))?;
    fs::write(dir.join(CONFIG_COPY), cfg.to_json()).map_err(|e| AbenError::io(&dir, e))?;
    write_json(
        &dir.join(RUN_MANIFEST),
        &serde_json::json!({
            "command": "train",
            "seed": cfg.training.seed,
            "mode": cfg.training.mode,
            "epochs": cfg.training.epochs,
            "vocab_size": vocab.len(),
            "vocab_hash": vocab.hash(),
            "scenes": [split.train.len(), split.validation.len(), split.test.len()],
            "parameters": model.parameter_count(),
            "files": [CONFIG_COPY, "train_log.jsonl", "checkpoints/last", "checkpoints/best"],
        }),
    )?;
    let mut manifest = CheckpointManifest::new(&model, &vocab, spec, split.standardization_stats.clone());
    manifest.run_config = Some(serde_json::to_value(cfg).map_err(|e| AbenError::Config(e.to_string()))?);
    let output = RunOutput { dir: &dir, manifest };
    let outcome = train(&mut model, &train_set, &val_set, &vocab, &synonyms, &cfg.training, Some(output))?;
    Ok(TrainRun { run_dir: dir, outcome, model, vocab })
}

/// The run configuration stored in a checkpoint manifest.
pub fn checkpoint_config(manifest: &CheckpointManifest) -> Result<RunConfig> {
    let value = manifest
        .run_config
        .clone()
        .ok_or_else(|| AbenError::Checkpoint("manifest has no run configuration; pass --config".into()))?;
    serde_json::from_value(value).map_err(|e| AbenError::Checkpoint(e.to_string()))
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: MetricReport,
    /// Generated sentences of the first run.
    pub sentences: Vec<String>,
    pub truncated: usize,
}

/// Generates over a split with each checkpoint and scores the outputs. A
/// single checkpoint with `runs > 1` is decoded `runs` times.
pub fn evaluate_checkpoints(
    checkpoints: &[PathBuf],
    split_name: SplitName,
    runs: usize,
    config_override: Option<&RunConfig>,
    synonyms: &SynonymTable,
) -> Result<Evaluation> {
    if checkpoints.is_empty() || runs == 0 {
        return Err(AbenError::Config("need at least one checkpoint and one run".into()));
    }
    let mut references: Option<Vec<Vec<Tokens>>> = None;
    let mut outputs: Vec<Vec<Tokens>> = Vec::new();
    let mut first_sentences = Vec::new();
    let mut truncated = 0;
    let plan: Vec<&PathBuf> =
        if checkpoints.len() == 1 { std::iter::repeat_n(&checkpoints[0], runs).collect() } else { checkpoints.iter().collect() };
    let mut cache: Option<(PathBuf, Pipeline, Vec<SceneSample>, usize)> = None;
    for path in plan {
        if cache.as_ref().is_none_or(|c| &c.0 != path) {
            let ckpt = load_checkpoint(path)?;
            let cfg = match config_override {
                Some(c) => c.clone(),
                None => checkpoint_config(&ckpt.manifest)?,
            };
            let split = load_split(&cfg)?;
            let scenes = split_name.select(&split).to_vec();
            if scenes.is_empty() {
                return Err(AbenError::Contract(format!("{split_name:?} split is empty")));
            }
            cache = Some((path.clone(), Pipeline::from_checkpoint(ckpt)?, scenes, cfg.inference.max_len));
        }
        let (_, pipeline, scenes, max_len) = cache.as_ref().unwrap();
        let refs: Vec<Vec<Tokens>> = scenes.iter().map(|s| s.references.iter().map(|r| tokenize(r)).collect()).collect();
        match &references {
            None => references = Some(refs),
            Some(existing) if *existing != refs => {
                return Err(AbenError::Contract("checkpoints disagree on the evaluation split".into()));
            }
            _ => {}
        }
        let mut run = Vec::with_capacity(scenes.len());
        for s in scenes {
            let result = generate_sentence(pipeline, s, *max_len)?;
            if outputs.is_empty() {
                truncated += usize::from(result.truncated);
                first_sentences.push(result.sentence.clone());
            }
            run.push(tokenize(&result.sentence));
        }
        outputs.push(run);
    }
    let report = evaluate_corpus(&outputs, references.as_deref().unwrap_or_default(), synonyms)?;
    Ok(Evaluation { report, sentences: first_sentences, truncated })
}
