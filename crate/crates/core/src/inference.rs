//! Greedy generation for single scenes and attention export.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_checkpoint, Checkpoint};
use crate::dataset::{load_image, SceneSample, StandardizationStats};
use crate::encoder::{extract_scene_features, ConvBackbone};
use crate::error::{AbenError, Result};
use crate::model::{AbenModel, Decoded};
use crate::tokenizer::{SubwordVocabulary, TokenSequence};

/// Label of a context slot filled by the scene encoding.
pub const ENCODER_SLOT: &str = "[ENC]";
pub const RESULT_FILE: &str = "result.json";
pub const LINGUISTIC_CSV: &str = "linguistic_attention.csv";
/// Peak opacity of the blue overlay.
pub const OVERLAY_ALPHA: f64 = 0.6;

/// Everything generation needs, reconstructed from a checkpoint.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub model: AbenModel,
    pub vocab: SubwordVocabulary,
    pub backbone: ConvBackbone,
    pub stats: StandardizationStats,
}

impl Pipeline {
    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let backbone = ckpt.manifest.backbone.build()?;
        Ok(Self { model: ckpt.model, vocab: ckpt.vocab, backbone, stats: ckpt.manifest.standardization })
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Self::from_checkpoint(load_checkpoint(dir)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotWeight {
    pub subword: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationResult {
    pub ids: Vec<u32>,
    pub sentence: String,
    pub truncated: bool,
    /// Per step, row-major over the pooled grid.
    pub visual_maps: Vec<Vec<f64>>,
    pub grid: usize,
    /// Per step, one entry per context slot, oldest first.
    pub linguistic: Vec<Vec<SlotWeight>>,
    pub vab_probs: Vec<Vec<f64>>,
    pub lab_probs: Vec<Vec<f64>>,
    pub gen_probs: Vec<Vec<f64>>,
}

impl GenerationResult {
    pub fn steps(&self) -> usize {
        self.visual_maps.len()
    }

    pub fn tokens(&self, vocab: &SubwordVocabulary) -> Vec<String> {
        self.ids.iter().map(|&i| vocab.token(i).to_owned()).collect()
    }
}

pub fn describe_decoded(decoded: Decoded, vocab: &SubwordVocabulary, grid: usize) -> GenerationResult {
    let sentence = vocab.detokenize(&TokenSequence::new(decoded.ids.clone()));
    let linguistic = decoded
        .context_tokens
        .iter()
        .zip(&decoded.linguistic_weights)
        .map(|(slots, weights)| {
            slots
                .iter()
                .zip(weights)
                .map(|(s, &w)| SlotWeight { subword: s.map_or_else(|| ENCODER_SLOT.to_owned(), |id| vocab.token(id).to_owned()), weight: w })
                .collect()
        })
        .collect();
    GenerationResult {
        ids: decoded.ids,
        sentence,
        truncated: decoded.truncated,
        visual_maps: decoded.visual_maps,
        grid,
        linguistic,
        vab_probs: decoded.vab_probs,
        lab_probs: decoded.lab_probs,
        gen_probs: decoded.gen_probs,
    }
}

/// Encodes the scene and decodes greedily until EOS or `max_len` tokens.
pub fn generate_sentence(pipeline: &Pipeline, scene: &SceneSample, max_len: usize) -> Result<GenerationResult> {
    if max_len == 0 {
        return Err(AbenError::Config("max_len must be at least 1".into()));
    }
    let features = extract_scene_features(scene, &pipeline.backbone, &pipeline.stats)?;
    let decoded = pipeline.model.decode(&features, max_len)?;
    Ok(describe_decoded(decoded, &pipeline.vocab, pipeline.model.config.pooled_grid()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Upsample {
    #[default]
    Nearest,
    Bilinear,
}

impl std::str::FromStr for Upsample {
    type Err = AbenError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest" => Ok(Self::Nearest),
            "bilinear" => Ok(Self::Bilinear),
            other => Err(AbenError::Config(format!("unknown upsampling `{other}` (expected nearest or bilinear)"))),
        }
    }
}

/// Resamples a `grid × grid` map to `width × height`.
pub fn upsample_map(map: &[f64], grid: usize, width: u32, height: u32, mode: Upsample) -> Vec<f64> {
    let (w, h) = (width as usize, height as usize);
    let at = |gy: usize, gx: usize| map[gy * grid + gx];
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let v = match mode {
                Upsample::Nearest => at((y * grid / h).min(grid - 1), (x * grid / w).min(grid - 1)),
                Upsample::Bilinear => {
                    let max = (grid - 1) as f64;
                    let fy = ((y as f64 + 0.5) * grid as f64 / h as f64 - 0.5).clamp(0.0, max);
                    let fx = ((x as f64 + 0.5) * grid as f64 / w as f64 - 0.5).clamp(0.0, max);
                    let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
                    let (y1, x1) = ((y0 + 1).min(grid - 1), (x0 + 1).min(grid - 1));
                    let (ty, tx) = (fy - y0 as f64, fx - x0 as f64);
                    let top = at(y0, x0) * (1.0 - tx) + at(y0, x1) * tx;
                    let bottom = at(y1, x0) * (1.0 - tx) + at(y1, x1) * tx;
                    top * (1.0 - ty) + bottom * ty
                }
            };
            out.push(v);
        }
    }
    out
}

/// Blends blue into `image` with per-pixel opacity `OVERLAY_ALPHA · a`.
pub fn overlay(image: &RgbImage, map: &[f64], grid: usize, mode: Upsample) -> RgbImage {
    let (w, h) = image.dimensions();
    let up = upsample_map(map, grid, w, h, mode);
    let mut out = image.clone();
    for (i, px) in out.pixels_mut().enumerate() {
        let a = OVERLAY_ALPHA * up[i].clamp(0.0, 1.0);
        let blend = |c: u8, target: f64| ((1.0 - a) * c as f64 + a * target).round().clamp(0.0, 255.0) as u8;
        *px = Rgb([blend(px[0], 0.0), blend(px[1], 0.0), blend(px[2], 255.0)]);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub ids: Vec<u32>,
    pub tokens: Vec<String>,
    pub sentence: String,
    pub truncated: bool,
    /// 0 when decoding reached EOS, [`TRUNCATED_STATUS`] when it hit the
    /// length limit.
    pub status: u8,
    pub steps: usize,
}

pub const TRUNCATED_STATUS: u8 = 1;

pub fn result_record(result: &GenerationResult, vocab: &SubwordVocabulary) -> ResultRecord {
    ResultRecord {
        ids: result.ids.clone(),
        tokens: result.tokens(vocab),
        sentence: result.sentence.clone(),
        truncated: result.truncated,
        status: if result.truncated { TRUNCATED_STATUS } else { 0 },
        steps: result.steps(),
    }
}

pub fn step_png_name(step: usize) -> String {
    format!("step_{step}.png")
}

/// Writes `step_<k>.png` overlays (k from 1), the linguistic weight CSV and
/// `result.json` into `out_dir`. Returns the written paths.
pub fn export_attention(
    result: &GenerationResult,
    vocab: &SubwordVocabulary,
    scene: &SceneSample,
    out_dir: &Path,
    mode: Upsample,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| AbenError::io(out_dir, e))?;
    let image = load_image(&scene.image_path)?;
    let mut written = Vec::new();
    for (k, map) in result.visual_maps.iter().enumerate() {
        let path = out_dir.join(step_png_name(k + 1));
        overlay(&image, map, result.grid, mode).save(&path).map_err(|e| AbenError::Image(format!("{}: {e}", path.display())))?;
        written.push(path);
    }

    let csv = out_dir.join(LINGUISTIC_CSV);
    let file = File::create(&csv).map_err(|e| AbenError::io(&csv, e))?;
    let mut w = BufWriter::new(file);
    let rows = (|| -> std::io::Result<()> {
        writeln!(w, "step,slot,subword,weight")?;
        for (k, slots) in result.linguistic.iter().enumerate() {
            for (j, s) in slots.iter().enumerate() {
                writeln!(w, "{},{},{},{}", k + 1, j + 1, csv_field(&s.subword), s.weight)?;
            }
        }
        w.flush()
    })();
    rows.map_err(|e| AbenError::io(&csv, e))?;
    written.push(csv);

    let json = out_dir.join(RESULT_FILE);
    let text = serde_json::to_string_pretty(&result_record(result, vocab)).map_err(|e| AbenError::Checkpoint(e.to_string()))?;
    fs::write(&json, text).map_err(|e| AbenError::io(&json, e))?;
    written.push(json);
    Ok(written)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}
