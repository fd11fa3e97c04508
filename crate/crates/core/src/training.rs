//! Joint optimization of the three branches.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use aben_metrics::{meteor_corpus, tokenize, SynonymTable};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{save_checkpoint, CheckpointManifest};
use crate::dataset::{SceneSample, StandardizationStats};
use crate::encoder::{extract_scene_features, SceneFeatures, VisualBackbone};
use crate::error::{AbenError, Result};
use crate::model::{seeded_rng, AbenModel, Example, InputPolicy};
use crate::nn::{cross_entropy, Adam, AdamConfig, BnObservation, Graph, Mode};
use crate::tokenizer::{SubwordVocabulary, TokenSequence};

/// Per-branch cross-entropy and their sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    #[serde(rename = "L_v")]
    pub loss_v: f64,
    #[serde(rename = "L_l")]
    pub loss_l: f64,
    #[serde(rename = "L_g")]
    pub loss_g: f64,
    #[serde(rename = "L_total")]
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(loss_v: f64, loss_l: f64, loss_g: f64) -> Self {
        Self { loss_v, loss_l, loss_g, total: loss_v + loss_l + loss_g }
    }

    pub fn is_finite(&self) -> bool {
        self.loss_v.is_finite() && self.loss_l.is_finite() && self.loss_g.is_finite() && self.total.is_finite()
    }
}

/// Sums `−ln p(label)` over steps for each branch. Each slice holds one
/// distribution per step, aligned with `labels`.
pub fn compute_losses(p_v: &[Vec<f64>], p_l: &[Vec<f64>], p_g: &[Vec<f64>], labels: &[u32]) -> Result<LossBreakdown> {
    let n = labels.len();
    if p_v.len() != n || p_l.len() != n || p_g.len() != n {
        return Err(AbenError::Contract(format!(
            "distribution counts ({}, {}, {}) do not match {n} labels",
            p_v.len(),
            p_l.len(),
            p_g.len()
        )));
    }
    let branch = |ps: &[Vec<f64>]| -> Result<f64> {
        let mut total = 0.0;
        for (p, &y) in ps.iter().zip(labels) {
            if y as usize >= p.len() {
                return Err(AbenError::Contract(format!("label {y} outside distribution of size {}", p.len())));
            }
            total += cross_entropy(p, y as usize);
        }
        Ok(total)
    };
    Ok(LossBreakdown::new(branch(p_v)?, branch(p_l)?, branch(p_g)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    Tf,
    Ss,
}

impl std::str::FromStr for SamplingMode {
    type Err = AbenError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tf" => Ok(Self::Tf),
            "ss" => Ok(Self::Ss),
            other => Err(AbenError::Config(format!("unknown sampling mode `{other}` (expected tf or ss)"))),
        }
    }
}

/// `ε = (max_epoch − epoch) / max_epoch`.
pub fn sampling_probability(epoch: usize, max_epoch: usize) -> Result<f64> {
    if max_epoch == 0 {
        return Err(AbenError::Config("max_epoch must be positive".into()));
    }
    if epoch > max_epoch {
        return Err(AbenError::Config(format!("epoch {epoch} beyond max_epoch {max_epoch}")));
    }
    Ok((max_epoch - epoch) as f64 / max_epoch as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplingSchedule {
    pub mode: SamplingMode,
    pub max_epoch: usize,
}

impl SamplingSchedule {
    pub fn epsilon(&self, epoch: usize) -> Result<f64> {
        match self.mode {
            SamplingMode::Tf => Ok(1.0),
            SamplingMode::Ss => sampling_probability(epoch, self.max_epoch),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub optimizer: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub mode: SamplingMode,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Decoding length limit for validation.
    pub max_len: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: AdamConfig::default(),
            batch_size: 32,
            epochs: 100,
            seed: 0,
            mode: SamplingMode::Tf,
            clip_norm: Some(5.0),
            max_len: 30,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.optimizer.lr > 0.0) {
            return Err(AbenError::Config(format!("learning rate must be positive, got {}", self.optimizer.lr)));
        }
        if self.batch_size == 0 {
            return Err(AbenError::Config("batch_size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(AbenError::Config("epochs must be at least 1".into()));
        }
        if self.max_len == 0 {
            return Err(AbenError::Config("max_len must be at least 1".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(AbenError::Config(format!("clip_norm must be positive, got {c}")));
            }
        }
        Ok(())
    }

    pub fn schedule(&self) -> SamplingSchedule {
        SamplingSchedule { mode: self.mode, max_epoch: self.epochs }
    }
}

/// A scene with its model inputs, tokenized targets and reference sentences.
#[derive(Debug, Clone)]
pub struct PreparedScene {
    pub features: SceneFeatures,
    pub targets: Vec<TokenSequence>,
    pub references: Vec<String>,
}

pub fn prepare_scenes(
    scenes: &[SceneSample],
    backbone: &dyn VisualBackbone,
    stats: &StandardizationStats,
    vocab: &SubwordVocabulary,
) -> Result<Vec<PreparedScene>> {
    scenes
        .iter()
        .map(|s| {
            Ok(PreparedScene {
                features: extract_scene_features(s, backbone, stats)?,
                targets: s.references.iter().map(|r| vocab.tokenize(r)).collect(),
                references: s.references.clone(),
            })
        })
        .collect()
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    #[serde(flatten)]
    pub loss: LossBreakdown,
    pub val_loss: Option<f64>,
    pub val_meteor: Option<f64>,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub records: Vec<EpochRecord>,
    /// Total loss of every optimizer step, in order.
    pub batch_losses: Vec<f64>,
    pub best_epoch: Option<usize>,
}

/// Where a training run writes its log and checkpoints.
#[derive(Debug, Clone)]
pub struct RunOutput<'a> {
    pub dir: &'a Path,
    pub manifest: CheckpointManifest,
}

impl RunOutput<'_> {
    pub fn log_path(&self) -> PathBuf {
        self.dir.join("train_log.jsonl")
    }

    pub fn best_dir(&self) -> PathBuf {
        self.dir.join("checkpoints").join("best")
    }

    pub fn last_dir(&self) -> PathBuf {
        self.dir.join("checkpoints").join("last")
    }
}

/// Index of the highest score; ties go to the earliest. `None` entries
/// (epochs without validation) are skipped.
pub fn select_best_model(trace: &[Option<f64>]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in trace.iter().enumerate() {
        if let Some(s) = *s {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
    }
    best.map(|(i, _)| i)
}

/// Averages every observation of a buffer seen in one batch and folds it into
/// the running statistics once.
pub fn apply_bn_observations(model: &mut AbenModel, observations: &[BnObservation]) {
    let mut grouped: BTreeMap<usize, (Vec<f64>, Vec<f64>, usize)> = BTreeMap::new();
    let mut ids = BTreeMap::new();
    for o in observations {
        let e = grouped.entry(o.buffer.0).or_insert_with(|| (vec![0.0; o.mean.len()], vec![0.0; o.var.len()], 0));
        e.0.iter_mut().zip(&o.mean).for_each(|(a, b)| *a += b);
        e.1.iter_mut().zip(&o.var).for_each(|(a, b)| *a += b);
        e.2 += 1;
        ids.insert(o.buffer.0, o.buffer);
    }
    for (k, (mean, var, n)) in grouped {
        let n = n as f64;
        let obs = BnObservation {
            buffer: ids[&k],
            mean: mean.into_iter().map(|v| v / n).collect(),
            var: var.into_iter().map(|v| v / n).collect(),
        };
        model.buffers.update(&obs, model.config.bn_momentum);
    }
}

fn losses_of(g: &Graph, f: &crate::model::BatchForward) -> LossBreakdown {
    LossBreakdown {
        loss_v: g.value(f.loss_v).item(),
        loss_l: g.value(f.loss_l).item(),
        loss_g: g.value(f.loss_g).item(),
        total: g.value(f.total).item(),
    }
}

/// Teacher-forced loss over scenes in eval mode, averaged per pair.
pub fn evaluation_loss(model: &AbenModel, scenes: &[PreparedScene], batch_size: usize) -> Result<Option<f64>> {
    let pairs: Vec<Example> =
        scenes.iter().flat_map(|s| s.targets.iter().map(move |t| Example { features: &s.features, target: t })).collect();
    if pairs.is_empty() {
        return Ok(None);
    }
    let mut total = 0.0;
    for chunk in pairs.chunks(batch_size.max(1)) {
        let mut g = Graph::new(&model.params, &model.buffers, Mode::Eval);
        let f = model.forward_batch(&mut g, chunk, InputPolicy::TeacherForcing)?;
        total += g.value(f.total).item() * chunk.len() as f64;
    }
    Ok(Some(total / pairs.len() as f64))
}

/// Mean sentence METEOR of greedy decodes against each scene's references.
pub fn validation_meteor(
    model: &AbenModel,
    scenes: &[PreparedScene],
    vocab: &SubwordVocabulary,
    synonyms: &SynonymTable,
    max_len: usize,
) -> Result<Option<f64>> {
    if scenes.is_empty() {
        return Ok(None);
    }
    let mut candidates = Vec::with_capacity(scenes.len());
    let mut references = Vec::with_capacity(scenes.len());
    for s in scenes {
        let decoded = model.decode(&s.features, max_len)?;
        candidates.push(tokenize(&vocab.detokenize(&TokenSequence::new(decoded.ids))));
        references.push(s.references.iter().map(|r| tokenize(r)).collect());
    }
    Ok(Some(meteor_corpus(&candidates, &references, synonyms)?))
}

fn write_diagnostic(dir: Option<&Path>, epoch: usize, batch: usize, members: &[(usize, usize)], loss: &LossBreakdown) {
    let Some(dir) = dir else { return };
    let dump = serde_json::json!({
        "epoch": epoch,
        "batch": batch,
        "pairs": members.iter().map(|(s, t)| serde_json::json!({"scene": s, "sentence": t})).collect::<Vec<_>>(),
        "L_v": loss.loss_v.to_string(),
        "L_l": loss.loss_l.to_string(),
        "L_g": loss.loss_g.to_string(),
    });
    let path = dir.join("nonfinite_batch.json");
    if let Err(e) = fs::write(&path, serde_json::to_string_pretty(&dump).unwrap_or_default()) {
        log::error!("could not write {}: {e}", path.display());
    }
}

/// Trains `model` in place. Each epoch shuffles the (scene, sentence) pairs,
/// takes one Adam step per batch on `L_v + L_l + L_g`, then scores the
/// validation scenes. With `output`, the epoch log and the last and
/// best-METEOR checkpoints are written as training proceeds.
pub fn train(
    model: &mut AbenModel,
    train_scenes: &[PreparedScene],
    validation: &[PreparedScene],
    vocab: &SubwordVocabulary,
    synonyms: &SynonymTable,
    cfg: &TrainConfig,
    mut output: Option<RunOutput>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut pairs: Vec<(usize, usize)> =
        train_scenes.iter().enumerate().flat_map(|(i, s)| (0..s.targets.len()).map(move |j| (i, j))).collect();
    if pairs.is_empty() {
        return Err(AbenError::Contract("training split has no sentence pairs".into()));
    }
    let schedule = cfg.schedule();
    let mut shuffle_rng = seeded_rng(cfg.seed);
    let mut sampling_rng = seeded_rng(cfg.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let mut adam = Adam::new(cfg.optimizer, &model.params);

    let mut log = match &output {
        Some(o) => {
            fs::create_dir_all(o.dir).map_err(|e| AbenError::io(o.dir, e))?;
            let p = o.log_path();
            Some(BufWriter::new(File::create(&p).map_err(|e| AbenError::io(&p, e))?))
        }
        None => None,
    };

    let mut outcome = TrainOutcome { records: Vec::new(), batch_losses: Vec::new(), best_epoch: None };
    let mut meteor_trace: Vec<Option<f64>> = Vec::new();
    for epoch in 0..cfg.epochs {
        let epsilon = schedule.epsilon(epoch)?;
        pairs.shuffle(&mut shuffle_rng);
        let mut sums = [0.0; 3];
        let mut batches = 0usize;
        for (bi, members) in pairs.chunks(cfg.batch_size).enumerate() {
            let examples: Vec<Example> = members
                .iter()
                .map(|&(s, t)| Example { features: &train_scenes[s].features, target: &train_scenes[s].targets[t] })
                .collect();
            let (loss, mut grads, observations) = {
                let mut g = Graph::new(&model.params, &model.buffers, Mode::Train);
                let policy = match cfg.mode {
                    SamplingMode::Tf => InputPolicy::TeacherForcing,
                    SamplingMode::Ss => InputPolicy::Scheduled { epsilon, rng: &mut sampling_rng },
                };
                let f = model.forward_batch(&mut g, &examples, policy)?;
                let loss = losses_of(&g, &f);
                let grads = g.backward(f.total);
                (loss, grads, g.take_bn_observations())
            };
            if !loss.is_finite() || !grads.is_finite() {
                write_diagnostic(output.as_ref().map(|o| o.dir), epoch, bi, members, &loss);
                return Err(AbenError::NonFiniteLoss {
                    epoch,
                    batch: bi,
                    detail: format!("L_v={} L_l={} L_g={} pairs={members:?}", loss.loss_v, loss.loss_l, loss.loss_g),
                });
            }
            if let Some(c) = cfg.clip_norm {
                grads.clip_global_norm(c);
            }
            adam.step(&mut model.params, &grads);
            apply_bn_observations(model, &observations);
            sums[0] += loss.loss_v;
            sums[1] += loss.loss_l;
            sums[2] += loss.loss_g;
            outcome.batch_losses.push(loss.total);
            batches += 1;
        }
        let n = batches as f64;
        let loss = LossBreakdown::new(sums[0] / n, sums[1] / n, sums[2] / n);
        let val_loss = evaluation_loss(model, validation, cfg.batch_size)?;
        let val_meteor = validation_meteor(model, validation, vocab, synonyms, cfg.max_len)?;
        meteor_trace.push(val_meteor);
        let record = EpochRecord { epoch, loss, val_loss, val_meteor, epsilon };
        log::info!(
            "epoch {epoch}: L={:.4} (v {:.4}, l {:.4}, g {:.4}) val_meteor={:?} eps={epsilon}",
            loss.total,
            loss.loss_v,
            loss.loss_l,
            loss.loss_g,
            val_meteor
        );
        if let (Some(w), Some(o)) = (log.as_mut(), output.as_ref()) {
            let line = serde_json::to_string(&record).map_err(|e| AbenError::Checkpoint(e.to_string()))?;
            writeln!(w, "{line}").and_then(|_| w.flush()).map_err(|e| AbenError::io(&o.log_path(), e))?;
        }
        outcome.records.push(record);
        let best = select_best_model(&meteor_trace);
        let improved = best == Some(epoch);
        outcome.best_epoch = best;
        if let Some(o) = output.as_mut() {
            o.manifest.epoch = epoch;
            o.manifest.metric_trace = meteor_trace.clone();
            o.manifest.best_epoch = best;
            save_checkpoint(&o.last_dir(), model, vocab, &o.manifest)?;
            if improved {
                save_checkpoint(&o.best_dir(), model, vocab, &o.manifest)?;
            }
        }
    }
    Ok(outcome)
}
