//! Checkpoint directories: `manifest.json`, `weights.bin` and `vocab.txt`.
//!
//! `weights.bin` starts with the magic `ABENW1`, then a little-endian `u32`
//! entry count. Each entry is a `u32` name length, the UTF-8 name, a `u32`
//! rank, `u64` dimensions and the `f64` values. Parameters use their store
//! names; batch-norm running statistics are stored as `<buffer>.running_mean`
//! and `<buffer>.running_var`.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::dataset::StandardizationStats;
use crate::encoder::ConvBackbone;
use crate::error::{AbenError, Result};
use crate::model::{AbenModel, ModelConfig};
use crate::nn::Tensor;
use crate::tokenizer::{EmbeddingTable, SubwordVocabulary};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const WEIGHTS_FILE: &str = "weights.bin";
pub const VOCAB_FILE: &str = "vocab.txt";
const MAGIC: &[u8; 6] = b"ABENW1";
pub const FORMAT_VERSION: u32 = 1;

/// Recipe for the frozen backbone; the weights are regenerated from the seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneSpec {
    pub channels: usize,
    pub input_side: usize,
    pub seed: u64,
}

impl BackboneSpec {
    pub fn build(&self) -> Result<ConvBackbone> {
        ConvBackbone::new(self.channels, self.input_side, self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub epoch: usize,
    pub best_epoch: Option<usize>,
    pub model: ModelConfig,
    pub vocab_size: usize,
    pub vocab_hash: String,
    pub backbone: BackboneSpec,
    pub standardization: StandardizationStats,
    /// Validation METEOR per epoch so far.
    pub metric_trace: Vec<Option<f64>>,
    /// The run configuration that produced this checkpoint, verbatim.
    #[serde(default)]
    pub run_config: Option<serde_json::Value>,
}

impl CheckpointManifest {
    pub fn new(
        model: &AbenModel,
        vocab: &SubwordVocabulary,
        backbone: BackboneSpec,
        standardization: StandardizationStats,
    ) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            epoch: 0,
            best_epoch: None,
            model: model.config.clone(),
            vocab_size: vocab.len(),
            vocab_hash: vocab.hash(),
            backbone,
            standardization,
            metric_trace: Vec::new(),
            run_config: None,
        }
    }
}

fn checkpoint_err(path: &Path, msg: impl std::fmt::Display) -> AbenError {
    AbenError::Checkpoint(format!("{}: {msg}", path.display()))
}

fn write_entry(w: &mut impl Write, name: &str, shape: &[usize], data: &[f64]) -> std::io::Result<()> {
    w.write_u32::<LittleEndian>(name.len() as u32)?;
    w.write_all(name.as_bytes())?;
    w.write_u32::<LittleEndian>(shape.len() as u32)?;
    for &d in shape {
        w.write_u64::<LittleEndian>(d as u64)?;
    }
    for &v in data {
        w.write_f64::<LittleEndian>(v)?;
    }
    Ok(())
}

pub fn save_weights(path: &Path, model: &AbenModel) -> Result<()> {
    let file = File::create(path).map_err(|e| AbenError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let count = model.params.len() + 2 * model.buffers.len();
    let result = (|| -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(count as u32)?;
        for id in model.params.ids() {
            let t = model.params.get(id);
            write_entry(&mut w, model.params.name(id), t.shape(), t.data())?;
        }
        for id in model.buffers.ids() {
            let name = model.buffers.name(id);
            let mean = model.buffers.mean(id);
            write_entry(&mut w, &format!("{name}.running_mean"), &[mean.len()], mean)?;
            let var = model.buffers.var(id);
            write_entry(&mut w, &format!("{name}.running_var"), &[var.len()], var)?;
        }
        w.flush()
    })();
    result.map_err(|e| AbenError::io(path, e))
}

pub fn read_weights(path: &Path) -> Result<BTreeMap<String, Tensor>> {
    let file = File::open(path).map_err(|e| AbenError::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic).map_err(|e| checkpoint_err(path, e))?;
    if &magic != MAGIC {
        return Err(checkpoint_err(path, "not a weights file"));
    }
    let err = |e: std::io::Error| checkpoint_err(path, format!("truncated or corrupt: {e}"));
    let count = r.read_u32::<LittleEndian>().map_err(err)?;
    let mut out = BTreeMap::new();
    for _ in 0..count {
        let len = r.read_u32::<LittleEndian>().map_err(err)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(err)?;
        let name = String::from_utf8(name).map_err(|e| checkpoint_err(path, e))?;
        let rank = r.read_u32::<LittleEndian>().map_err(err)? as usize;
        let shape: Vec<usize> = (0..rank).map(|_| r.read_u64::<LittleEndian>().map(|d| d as usize)).collect::<std::io::Result<_>>().map_err(err)?;
        let n: usize = shape.iter().product();
        let mut data = vec![0.0; n];
        r.read_f64_into::<LittleEndian>(&mut data).map_err(err)?;
        out.insert(name, Tensor::from_vec(&shape, data));
    }
    Ok(out)
}

/// Writes the three checkpoint files into `dir`, creating it if needed.
pub fn save_checkpoint(dir: &Path, model: &AbenModel, vocab: &SubwordVocabulary, manifest: &CheckpointManifest) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| AbenError::io(dir, e))?;
    save_weights(&dir.join(WEIGHTS_FILE), model)?;
    vocab.save(&dir.join(VOCAB_FILE))?;
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(manifest).map_err(|e| checkpoint_err(&path, e))?;
    fs::write(&path, text).map_err(|e| AbenError::io(&path, e))
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    pub model: AbenModel,
    pub vocab: SubwordVocabulary,
}

pub fn load_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| AbenError::io(&path, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text).map_err(|e| checkpoint_err(&path, e))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(checkpoint_err(&path, format!("unsupported format version {}", manifest.format_version)));
    }
    Ok(manifest)
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let manifest = load_manifest(dir)?;
    let vocab = SubwordVocabulary::load(&dir.join(VOCAB_FILE))?;
    if vocab.hash() != manifest.vocab_hash || vocab.len() != manifest.vocab_size {
        return Err(checkpoint_err(dir, "vocabulary does not match the manifest"));
    }
    let placeholder = EmbeddingTable::from_tensor(Tensor::zeros(&[vocab.len(), manifest.model.embedding_dim]))?;
    let mut model = AbenModel::new(manifest.model.clone(), &placeholder, 0)?;
    let path = dir.join(WEIGHTS_FILE);
    let mut weights = read_weights(&path)?;
    for id in model.params.ids().collect::<Vec<_>>() {
        let name = model.params.name(id).to_owned();
        let t = weights.remove(&name).ok_or_else(|| checkpoint_err(&path, format!("missing parameter {name}")))?;
        if t.shape() != model.params.get(id).shape() {
            return Err(checkpoint_err(&path, format!("{name} has shape {:?}, expected {:?}", t.shape(), model.params.get(id).shape())));
        }
        *model.params.get_mut(id) = t;
    }
    for id in model.buffers.ids().collect::<Vec<_>>() {
        let name = model.buffers.name(id).to_owned();
        let mut take = |suffix: &str| -> Result<Vec<f64>> {
            let key = format!("{name}.{suffix}");
            let t = weights.remove(&key).ok_or_else(|| checkpoint_err(&path, format!("missing statistic {key}")))?;
            if t.len() != model.buffers.mean(id).len() {
                return Err(checkpoint_err(&path, format!("{key} has {} entries", t.len())));
            }
            Ok(t.into_data())
        };
        let (mean, var) = (take("running_mean")?, take("running_var")?);
        model.buffers.set(id, mean, var);
    }
    if let Some(extra) = weights.keys().next() {
        return Err(checkpoint_err(&path, format!("unexpected entry {extra}")));
    }
    Ok(Checkpoint { manifest, model, vocab })
}
