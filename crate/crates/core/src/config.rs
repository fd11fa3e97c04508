//! Run configuration: one JSON document covering data, model and training.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::SplitRatios;
use crate::error::{AbenError, Result};
use crate::inference::Upsample;
use crate::model::ModelConfig;
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Scene records, one JSON object per line.
    pub input: PathBuf,
    #[serde(default)]
    pub ratios: SplitRatios,
    #[serde(default)]
    pub split_seed: u64,
    /// Whole words kept when building a vocabulary from the training split.
    #[serde(default = "default_top_k")]
    pub vocab_top_k: usize,
    /// Use this vocabulary instead of building one (requires `embeddings`).
    #[serde(default)]
    pub vocab: Option<PathBuf>,
    #[serde(default)]
    pub embeddings: Option<PathBuf>,
    /// Seed and scale of the random embedding table used when no embedding
    /// file is given.
    #[serde(default)]
    pub embedding_seed: u64,
    #[serde(default = "default_embedding_std")]
    pub embedding_std: f64,
    #[serde(default)]
    pub synonyms: Option<PathBuf>,
}

fn default_top_k() -> usize {
    1000
}

fn default_embedding_std() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceConfig {
    pub max_len: usize,
    pub upsample: Upsample,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self { max_len: 30, upsample: Upsample::Nearest }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub training: TrainConfig,
    #[serde(default)]
    pub backbone_seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub inference: InferenceConfig,
}

fn default_output() -> PathBuf {
    PathBuf::from("runs/default")
}

impl RunConfig {
    pub fn new(input: PathBuf) -> Self {
        Self {
            data: DataConfig {
                input,
                ratios: SplitRatios::default(),
                split_seed: 0,
                vocab_top_k: default_top_k(),
                vocab: None,
                embeddings: None,
                embedding_seed: 0,
                embedding_std: default_embedding_std(),
                synonyms: None,
            },
            model: ModelConfig::default(),
            training: TrainConfig::default(),
            backbone_seed: 0,
            output_dir: default_output(),
            inference: InferenceConfig::default(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| AbenError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file; relative paths inside it resolve
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AbenError::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data.input);
        fix(&mut self.output_dir);
        for p in [&mut self.data.vocab, &mut self.data.embeddings, &mut self.data.synonyms].into_iter().flatten() {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.data.ratios.validate()?;
        self.model.validate()?;
        self.training.validate()?;
        if self.data.vocab.is_some() != self.data.embeddings.is_some() {
            return Err(AbenError::Config("data.vocab and data.embeddings must be given together".into()));
        }
        if self.data.vocab_top_k == 0 {
            return Err(AbenError::Config("data.vocab_top_k must be positive".into()));
        }
        if !(self.data.embedding_std > 0.0) {
            return Err(AbenError::Config("data.embedding_std must be positive".into()));
        }
        if self.inference.max_len == 0 {
            return Err(AbenError::Config("inference.max_len must be positive".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = RunConfig::parse(r#"{"data": {"input": "scenes.jsonl"}}"#).unwrap();
        assert_eq!(cfg.model.context, 10);
        assert_eq!(cfg.model.hidden, 768);
        assert_eq!(cfg.training.batch_size, 32);
        assert_eq!(cfg.training.epochs, 100);
        assert_eq!(cfg.training.optimizer.beta1, 0.7);
        assert_eq!(cfg.training.optimizer.beta2, 0.99999);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::parse(r#"{"data": {"input": "x"}, "extra": 1}"#).is_err());
        assert!(RunConfig::parse(r#"{"data": {"input": "x"}, "model": {"hiden": 4}}"#).is_err());
        assert!(RunConfig::parse(r#"{"data": {"input": "x"}, "training": {"lr": 1}}"#).is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::parse(r#"{"data": {"input": "x"}, "training": {"batch_size": 0}}"#).is_err());
        assert!(RunConfig::parse(r#"{"data": {"input": "x", "ratios": {"train": 0.5, "validation": 0.1, "test": 0.1}}}"#).is_err());
        assert!(RunConfig::parse(r#"{"data": {"input": "x", "vocab": "v.txt"}}"#).is_err());
    }

    #[test]
    fn round_trips() {
        let cfg = RunConfig::new(PathBuf::from("a.jsonl"));
        assert_eq!(RunConfig::parse(&cfg.to_json()).unwrap(), cfg);
    }
}
