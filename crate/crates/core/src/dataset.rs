//! Scene records, relational geometry, sentence cleaning and dataset splits.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use image::RgbImage;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AbenError, Result};
use crate::nn::Tensor;

/// Length of the relational feature vector (three 5-entry blocks).
pub const RELATION_DIM: usize = 15;

/// Axis-aligned box in pixels: left, top, width, height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        let b = Self { x, y, w, h };
        if ![x, y, w, h].iter().all(|v| v.is_finite()) {
            return Err(AbenError::InvalidGeometry(format!("non-finite box {b:?}")));
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(AbenError::InvalidGeometry(format!("box {b:?} has non-positive size")));
        }
        if x < 0.0 || y < 0.0 {
            return Err(AbenError::InvalidGeometry(format!("box {b:?} has negative origin")));
        }
        Ok(b)
    }

    /// The whole image as a box.
    pub fn full(width: u32, height: u32) -> Self {
        Self { x: 0.0, y: 0.0, w: width as f64, h: height as f64 }
    }

    pub fn fits_within(&self, width: u32, height: u32) -> bool {
        self.x + self.w <= width as f64 && self.y + self.h <= height as f64
    }

    fn from_array(v: [f64; 4]) -> Result<Self> {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

/// One annotated scene: an image, the target and source boxes and the
/// cleaned reference sentences.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSample {
    pub image_path: PathBuf,
    pub image_dims: (u32, u32),
    pub target_box: BoundingBox,
    pub source_box: BoundingBox,
    pub references: Vec<String>,
}

impl SceneSample {
    pub fn relational_features(&self) -> Result<RelationalFeatures> {
        compute_relational_features(&self.target_box, &self.source_box, self.image_dims)
    }

    pub fn to_record(&self) -> SceneRecord {
        let b = |b: &BoundingBox| [b.x, b.y, b.w, b.h];
        SceneRecord {
            image: self.image_path.to_string_lossy().into_owned(),
            width: self.image_dims.0,
            height: self.image_dims.1,
            target: b(&self.target_box),
            source: b(&self.source_box),
            sentences: self.references.clone(),
        }
    }
}

/// Position and size of the target relative to the source, the target
/// relative to the image, and the source relative to the image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelationalFeatures {
    pub values: [f64; RELATION_DIM],
}

fn relation_block(l: &BoundingBox, width: f64, height: f64) -> Result<[f64; 5]> {
    if !(width * height > 0.0) {
        return Err(AbenError::InvalidGeometry(format!("reference frame {width}x{height} has zero area")));
    }
    Ok([l.x / width, l.y / height, l.w / width, l.h / height, (l.w * l.h) / (width * height)])
}

pub fn compute_relational_features(
    target: &BoundingBox,
    source: &BoundingBox,
    image_dims: (u32, u32),
) -> Result<RelationalFeatures> {
    let (iw, ih) = (image_dims.0 as f64, image_dims.1 as f64);
    let blocks = [
        relation_block(target, source.w, source.h)?,
        relation_block(target, iw, ih)?,
        relation_block(source, iw, ih)?,
    ];
    let mut values = [0.0; RELATION_DIM];
    for (i, block) in blocks.iter().enumerate() {
        values[i * 5..i * 5 + 5].copy_from_slice(block);
    }
    Ok(RelationalFeatures { values })
}

/// Per-dimension mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl StandardizationStats {
    /// Zero-std dimensions are centered only.
    pub fn apply(&self, features: &RelationalFeatures) -> RelationalFeatures {
        let mut values = features.values;
        for (i, v) in values.iter_mut().enumerate() {
            *v -= self.mean[i];
            if self.std[i] > 0.0 {
                *v /= self.std[i];
            }
        }
        RelationalFeatures { values }
    }

    pub fn invert(&self, features: &RelationalFeatures) -> RelationalFeatures {
        let mut values = features.values;
        for (i, v) in values.iter_mut().enumerate() {
            if self.std[i] > 0.0 {
                *v *= self.std[i];
            }
            *v += self.mean[i];
        }
        RelationalFeatures { values }
    }
}

pub fn fit_standardizer(train: &[RelationalFeatures]) -> Result<StandardizationStats> {
    if train.is_empty() {
        return Err(AbenError::Contract("cannot fit standardizer on an empty training set".into()));
    }
    let n = train.len() as f64;
    let mut mean = vec![0.0; RELATION_DIM];
    for f in train {
        for (m, v) in mean.iter_mut().zip(&f.values) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut std = vec![0.0; RELATION_DIM];
    for f in train {
        for ((s, v), m) in std.iter_mut().zip(&f.values).zip(&mean) {
            *s += (v - m).powi(2);
        }
    }
    // A constant column leaves rounding residue in the mean; treat it as flat.
    for (s, m) in std.iter_mut().zip(&mean) {
        *s = (*s / n).sqrt();
        if *s <= 1e-12 * m.abs().max(1.0) {
            *s = 0.0;
        }
    }
    Ok(StandardizationStats { mean, std })
}

pub fn apply_standardizer(features: &RelationalFeatures, stats: &StandardizationStats) -> RelationalFeatures {
    stats.apply(features)
}

/// Lowercases, drops periods, trims and collapses whitespace.
pub fn preprocess_sentence(raw: &str) -> Result<String> {
    let cleaned = raw.to_lowercase().replace('.', " ");
    let joined = cleaned.split_whitespace().collect::<Vec<_>>().join(" ");
    if joined.is_empty() {
        return Err(AbenError::InvalidReference(format!("{raw:?} is empty after cleaning")));
    }
    Ok(joined)
}

/// On-disk form of one scene (one JSON object per line).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneRecord {
    pub image: String,
    pub width: u32,
    pub height: u32,
    pub target: [f64; 4],
    pub source: [f64; 4],
    pub sentences: Vec<String>,
}

impl SceneRecord {
    /// Validates the record; relative image paths resolve against `base`.
    pub fn validate(&self, base: &Path) -> Result<SceneSample> {
        if self.width == 0 || self.height == 0 {
            return Err(AbenError::InvalidGeometry(format!("image size {}x{}", self.width, self.height)));
        }
        let target = BoundingBox::from_array(self.target)?;
        let source = BoundingBox::from_array(self.source)?;
        for (name, b) in [("target", &target), ("source", &source)] {
            if !b.fits_within(self.width, self.height) {
                return Err(AbenError::InvalidGeometry(format!(
                    "{name} box {b:?} exceeds image {}x{}",
                    self.width, self.height
                )));
            }
        }
        if self.sentences.is_empty() {
            return Err(AbenError::InvalidReference("no sentences".into()));
        }
        let references = self.sentences.iter().map(|s| preprocess_sentence(s)).collect::<Result<Vec<_>>>()?;
        let path = Path::new(&self.image);
        let image_path = if path.is_absolute() { path.to_path_buf() } else { base.join(path) };
        Ok(SceneSample {
            image_path,
            image_dims: (self.width, self.height),
            target_box: target,
            source_box: source,
            references,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedRecord {
    pub line: usize,
    pub reason: String,
}

/// Report of records rejected during loading.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationSummary {
    pub total_records: usize,
    pub accepted: usize,
    pub rejected: Vec<RejectedRecord>,
}

impl ValidationSummary {
    pub fn is_clean(&self) -> bool {
        self.rejected.is_empty()
    }
}

/// Fractions of scenes assigned to train, validation and test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self { train: 0.8, validation: 0.1, test: 0.1 }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let all = [self.train, self.validation, self.test];
        if all.iter().any(|r| !(0.0..=1.0).contains(r)) || (all.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(AbenError::Config(format!("split ratios {self:?} must be in [0,1] and sum to 1")));
        }
        Ok(())
    }

    /// Scene counts: validation and test are floored, train takes the rest.
    pub fn counts(&self, n: usize) -> (usize, usize, usize) {
        let val = (self.validation * n as f64 + 1e-9).floor() as usize;
        let test = (self.test * n as f64 + 1e-9).floor() as usize;
        (n - val - test, val, test)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<SceneSample>,
    pub validation: Vec<SceneSample>,
    pub test: Vec<SceneSample>,
    /// Fitted on the train pairs only.
    pub standardization_stats: StandardizationStats,
}

impl DatasetSplit {
    /// Expands scenes to (scene index, sentence) pairs.
    pub fn pairs(scenes: &[SceneSample]) -> Vec<(usize, &str)> {
        scenes
            .iter()
            .enumerate()
            .flat_map(|(i, s)| s.references.iter().map(move |r| (i, r.as_str())))
            .collect()
    }
}

/// Parses and validates a JSONL file. Malformed JSON aborts with the line
/// number; records failing validation are skipped and reported.
pub fn read_records(path: &Path) -> Result<(Vec<SceneSample>, ValidationSummary)> {
    let file = std::fs::File::open(path).map_err(|e| AbenError::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut scenes = Vec::new();
    let mut summary = ValidationSummary::default();
    for (idx, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| AbenError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        summary.total_records += 1;
        let record: SceneRecord = serde_json::from_str(&line).map_err(|e| AbenError::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        match record.validate(&base) {
            Ok(scene) => scenes.push(scene),
            Err(e) => summary.rejected.push(RejectedRecord { line: idx + 1, reason: e.to_string() }),
        }
    }
    summary.accepted = scenes.len();
    Ok((scenes, summary))
}

/// Splits scenes by image so no image is shared across splits.
pub fn split_scenes(scenes: Vec<SceneSample>, ratios: SplitRatios, seed: u64) -> Result<DatasetSplit> {
    ratios.validate()?;
    let mut groups: BTreeMap<PathBuf, Vec<SceneSample>> = BTreeMap::new();
    for s in scenes {
        groups.entry(s.image_path.clone()).or_default().push(s);
    }
    let mut keys: Vec<PathBuf> = groups.keys().cloned().collect();
    keys.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (n_train, n_val, _) = ratios.counts(keys.len());
    let mut take = |range: std::ops::Range<usize>| -> Vec<SceneSample> {
        keys[range].iter().flat_map(|k| groups.remove(k).unwrap()).collect()
    };
    let train = take(0..n_train);
    let validation = take(n_train..n_train + n_val);
    let test = take(n_train + n_val..keys.len());
    if train.is_empty() {
        return Err(AbenError::Contract("training split is empty".into()));
    }
    let train_features = DatasetSplit::pairs(&train)
        .iter()
        .map(|&(i, _)| train[i].relational_features())
        .collect::<Result<Vec<_>>>()?;
    let standardization_stats = fit_standardizer(&train_features)?;
    Ok(DatasetSplit { train, validation, test, standardization_stats })
}

pub fn load_dataset(path: &Path, ratios: SplitRatios, seed: u64) -> Result<(DatasetSplit, ValidationSummary)> {
    let (scenes, summary) = read_records(path)?;
    Ok((split_scenes(scenes, ratios, seed)?, summary))
}

pub fn write_records(path: &Path, scenes: &[SceneSample]) -> Result<()> {
    let mut out = String::new();
    for s in scenes {
        out.push_str(&serde_json::to_string(&s.to_record()).expect("record serializes"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| AbenError::io(path, e))
}

pub fn load_image(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path).map_err(|e| AbenError::Image(format!("{}: {e}", path.display())))?.to_rgb8())
}

/// Crops `bbox` (expanded outward to whole pixels) and resizes it
/// bilinearly to `side × side`. Returns `[side, side, 3]` with values in [0, 1].
pub fn crop_and_resize(image: &RgbImage, bbox: &BoundingBox, side: u32) -> Result<Tensor> {
    if !bbox.fits_within(image.width(), image.height()) {
        return Err(AbenError::InvalidGeometry(format!(
            "box {bbox:?} exceeds image {}x{}",
            image.width(),
            image.height()
        )));
    }
    let x0 = bbox.x.floor() as u32;
    let y0 = bbox.y.floor() as u32;
    let x1 = ((bbox.x + bbox.w).ceil() as u32).min(image.width()).max(x0 + 1);
    let y1 = ((bbox.y + bbox.h).ceil() as u32).min(image.height()).max(y0 + 1);
    let crop = image::imageops::crop_imm(image, x0, y0, x1 - x0, y1 - y0).to_image();
    let resized = image::imageops::resize(&crop, side, side, image::imageops::FilterType::Triangle);
    let data = resized.as_raw().iter().map(|&v| v as f64 / 255.0).collect();
    Ok(Tensor::from_vec(&[side as usize, side as usize, 3], data))
}
