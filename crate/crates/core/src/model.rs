//! The full network: decoder, visual and linguistic attention branches and
//! the generation branch, plus the subword embedding table.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decoder::{Decoder, DecoderConfig, DecoderState};
use crate::encoder::{scene_encoding_dim, SceneFeatures, FEATURE_GRID};
use crate::error::{AbenError, Result};
use crate::genbranch::GenerationBranch;
use crate::lab::{build_context, LinguisticAttentionBranch};
use crate::nn::{argmax, softmax, BufferStore, Graph, Mode, ParamId, ParamStore, Tensor, Var};
use crate::tokenizer::{EmbeddingTable, TokenSequence, BOS, EOS};
use crate::vab::VisualAttentionBranch;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Backbone channels `C`.
    pub channels: usize,
    /// LSTM width `d`.
    pub hidden: usize,
    pub layers: usize,
    /// Linguistic context length `N`.
    pub context: usize,
    pub embedding_dim: usize,
    pub image_side: usize,
    pub fine_tune_embeddings: bool,
    pub bn_momentum: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: 512,
            hidden: 768,
            layers: 3,
            context: 10,
            embedding_dim: 768,
            image_side: 224,
            fine_tune_embeddings: false,
            bn_momentum: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("channels", self.channels),
            ("hidden", self.hidden),
            ("layers", self.layers),
            ("context", self.context),
            ("embedding_dim", self.embedding_dim),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(AbenError::Config(format!("model.{name} must be positive")));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) {
            return Err(AbenError::Config(format!("model.bn_momentum {} not in (0, 1]", self.bn_momentum)));
        }
        Ok(())
    }

    pub fn pooled_grid(&self) -> usize {
        FEATURE_GRID / 2
    }
}

/// How the next decoder input is chosen during a batched forward pass.
pub enum InputPolicy<'r> {
    TeacherForcing,
    /// Ground truth with probability `epsilon`, else the previous step's
    /// generation-branch argmax; one draw per sample and step.
    Scheduled { epsilon: f64, rng: &'r mut ChaCha8Rng },
}

/// Graph handles of one decoding step.
#[derive(Debug, Clone)]
pub struct StepTrace {
    pub vab_logits: Var,
    pub lab_logits: Var,
    pub gen_logits: Var,
    /// `[B, 3, 3, 1]`.
    pub visual_attention: Var,
    /// `[B, N]`.
    pub linguistic_weights: Var,
    /// `[B, N, d]` context before reweighting.
    pub context: Var,
    /// `[B, N, d]` after reweighting.
    pub weighted_context: Var,
    pub hidden: Var,
    pub inputs: Vec<u32>,
    pub labels: Vec<u32>,
    pub active: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct BatchForward {
    pub steps: Vec<StepTrace>,
    pub loss_v: Var,
    pub loss_l: Var,
    pub loss_g: Var,
    pub total: Var,
    pub batch_size: usize,
}

/// One training pair: precomputed scene features and the target subwords
/// (without BOS/EOS).
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub features: &'a SceneFeatures,
    pub target: &'a TokenSequence,
}

/// Raw greedy decode, before detokenization.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    /// Generated ids, EOS excluded.
    pub ids: Vec<u32>,
    pub truncated: bool,
    /// Per step: flattened `3 × 3` visual attention.
    pub visual_maps: Vec<Vec<f64>>,
    /// Per step: `N` linguistic weights.
    pub linguistic_weights: Vec<Vec<f64>>,
    /// Per step: the tokens occupying the context slots (`None` for encoder
    /// fill).
    pub context_tokens: Vec<Vec<Option<u32>>>,
    pub vab_probs: Vec<Vec<f64>>,
    pub lab_probs: Vec<Vec<f64>>,
    pub gen_probs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct AbenModel {
    pub config: ModelConfig,
    pub vocab_size: usize,
    pub params: ParamStore,
    pub buffers: BufferStore,
    pub embedding: ParamId,
    pub decoder: Decoder,
    pub vab: VisualAttentionBranch,
    pub lab: LinguisticAttentionBranch,
    pub gen: GenerationBranch,
}

impl AbenModel {
    pub fn new(config: ModelConfig, embeddings: &EmbeddingTable, seed: u64) -> Result<Self> {
        config.validate()?;
        embeddings.check_dim(config.embedding_dim)?;
        let vocab = embeddings.vocab_size();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut buffers = BufferStore::new();
        let embedding = params.add("embedding", embeddings.tensor().clone(), config.fine_tune_embeddings);
        let decoder = Decoder::register(
            &mut params,
            &mut rng,
            scene_encoding_dim(config.channels),
            DecoderConfig { layers: config.layers, hidden: config.hidden, input_dim: config.embedding_dim + config.channels },
        )?;
        let vab = VisualAttentionBranch::register(&mut params, &mut buffers, &mut rng, config.channels, config.hidden, vocab);
        let lab = LinguisticAttentionBranch::register(&mut params, &mut buffers, &mut rng, config.hidden, config.context, vocab);
        let gen = GenerationBranch::register(&mut params, &mut rng, config.hidden, config.context, vocab);
        Ok(Self { config, vocab_size: vocab, params, buffers, embedding, decoder, vab, lab, gen })
    }

    pub fn encoding_dim(&self) -> usize {
        scene_encoding_dim(self.config.channels)
    }

    fn check_features(&self, f: &SceneFeatures) -> Result<()> {
        let grid = self.config.pooled_grid();
        let expected = [grid, grid, self.config.channels];
        if f.pooled_visual.shape() != expected {
            return Err(AbenError::Shape(format!("pooled map {:?}, expected {expected:?}", f.pooled_visual.shape())));
        }
        if f.encoding.len() != self.encoding_dim() {
            return Err(AbenError::Shape(format!("scene encoding length {}, expected {}", f.encoding.len(), self.encoding_dim())));
        }
        if !f.encoding.values.iter().all(|v| v.is_finite()) || !f.pooled_visual.is_finite() {
            return Err(AbenError::Numeric("non-finite scene features".into()));
        }
        Ok(())
    }

    fn stack_features(&self, g: &mut Graph, features: &[&SceneFeatures]) -> Result<(Var, Var)> {
        let b = features.len();
        let grid = self.config.pooled_grid();
        let c = self.config.channels;
        let mut pooled = Vec::with_capacity(b * grid * grid * c);
        let mut enc = Vec::with_capacity(b * self.encoding_dim());
        for f in features {
            self.check_features(f)?;
            pooled.extend_from_slice(f.pooled_visual.data());
            enc.extend_from_slice(&f.encoding.values);
        }
        let pooled = g.constant(Tensor::from_vec(&[b, grid, grid, c], pooled));
        let enc = g.constant(Tensor::from_vec(&[b, self.encoding_dim()], enc));
        Ok((pooled, enc))
    }

    /// VAB, decoder step, LAB and generation branch for one time step.
    fn step(
        &self,
        g: &mut Graph,
        pooled: Var,
        projected: Var,
        state: &mut DecoderState,
        inputs: &[u32],
        active: &[bool],
    ) -> Result<StepTrace> {
        let b = inputs.len();
        let h_prev = match state.history.last() {
            Some(&h) => h,
            None => g.constant(Tensor::zeros(&[b, self.config.hidden])),
        };
        let vab = self.vab.forward(g, pooled, h_prev, active);
        let table = g.param(self.embedding);
        let ids: Vec<usize> = inputs.iter().map(|&i| i as usize).collect();
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.vocab_size) {
            return Err(AbenError::Vocab(format!("token id {bad} outside vocabulary of {}", self.vocab_size)));
        }
        let emb = g.gather_rows(table, &ids);
        let context = build_context(g, &state.history, projected, self.config.context);
        let hidden = self.decoder.step(g, state, emb, vab.attended)?;
        let lab = self.lab.forward(g, context, active);
        let gen_logits = self.gen.forward(g, hidden, lab.weighted);
        Ok(StepTrace {
            vab_logits: vab.logits,
            lab_logits: lab.logits,
            gen_logits,
            visual_attention: vab.attention,
            linguistic_weights: lab.weights,
            context,
            weighted_context: lab.weighted,
            hidden,
            inputs: inputs.to_vec(),
            labels: Vec::new(),
            active: active.to_vec(),
        })
    }

    /// Runs a batch through every step and builds the three branch losses
    /// (summed over steps, averaged over the batch) and their total.
    pub fn forward_batch(&self, g: &mut Graph, batch: &[Example], mut policy: InputPolicy) -> Result<BatchForward> {
        if batch.is_empty() {
            return Err(AbenError::Contract("empty batch".into()));
        }
        let b = batch.len();
        let feats: Vec<&SceneFeatures> = batch.iter().map(|e| e.features).collect();
        let (pooled, enc) = self.stack_features(g, &feats)?;
        let projected = self.decoder.project(g, enc);
        let mut state = self.decoder.init(g, projected);
        let framed: Vec<Vec<u32>> = batch.iter().map(|e| e.target.framed().ids).collect();
        let steps = framed.iter().map(|f| f.len() - 1).max().unwrap_or(0);
        let weight = 1.0 / b as f64;

        let mut traces: Vec<StepTrace> = Vec::with_capacity(steps);
        let (mut lv, mut ll, mut lg) = (Vec::new(), Vec::new(), Vec::new());
        for k in 0..steps {
            let active: Vec<bool> = framed.iter().map(|f| k + 1 < f.len()).collect();
            let labels: Vec<u32> = framed.iter().map(|f| if k + 1 < f.len() { f[k + 1] } else { EOS }).collect();
            let inputs: Vec<u32> = match (&mut policy, traces.last()) {
                (InputPolicy::Scheduled { epsilon, rng }, Some(prev)) => {
                    let predicted = argmax_rows(g.value(prev.gen_logits));
                    framed
                        .iter()
                        .zip(predicted)
                        .map(|(f, p)| {
                            let truth = f.get(k).copied().unwrap_or(EOS);
                            if rng.random::<f64>() < *epsilon {
                                truth
                            } else {
                                p as u32
                            }
                        })
                        .collect()
                }
                _ => framed.iter().map(|f| f.get(k).copied().unwrap_or(EOS)).collect(),
            };
            let mut trace = self.step(g, pooled, projected, &mut state, &inputs, &active)?;
            let label_idx: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
            let weights: Vec<f64> = active.iter().map(|&a| if a { weight } else { 0.0 }).collect();
            lv.push(g.softmax_cross_entropy(trace.vab_logits, &label_idx, &weights));
            ll.push(g.softmax_cross_entropy(trace.lab_logits, &label_idx, &weights));
            lg.push(g.softmax_cross_entropy(trace.gen_logits, &label_idx, &weights));
            trace.labels = labels;
            traces.push(trace);
        }
        let loss_v = g.sum_scalars(&lv);
        let loss_l = g.sum_scalars(&ll);
        let loss_g = g.sum_scalars(&lg);
        let total = g.sum_scalars(&[loss_v, loss_l, loss_g]);
        Ok(BatchForward { steps: traces, loss_v, loss_l, loss_g, total, batch_size: b })
    }

    /// Greedy decoding with running batch-norm statistics.
    pub fn decode(&self, features: &SceneFeatures, max_len: usize) -> Result<Decoded> {
        let mut g = Graph::new(&self.params, &self.buffers, Mode::Eval);
        let (pooled, enc) = self.stack_features(&mut g, &[features])?;
        let projected = self.decoder.project(&mut g, enc);
        let mut state = self.decoder.init(&mut g, projected);
        let mut out = Decoded {
            ids: Vec::new(),
            truncated: true,
            visual_maps: Vec::new(),
            linguistic_weights: Vec::new(),
            context_tokens: Vec::new(),
            vab_probs: Vec::new(),
            lab_probs: Vec::new(),
            gen_probs: Vec::new(),
        };
        let mut input = BOS;
        let mut fed: Vec<u32> = Vec::new();
        for _ in 0..max_len {
            let slots = crate::lab::context_slots(fed.len(), self.config.context);
            out.context_tokens.push(slots.into_iter().map(|s| s.map(|i| fed[i])).collect());
            let trace = self.step(&mut g, pooled, projected, &mut state, &[input], &[true])?;
            out.visual_maps.push(g.value(trace.visual_attention).data().to_vec());
            out.linguistic_weights.push(g.value(trace.linguistic_weights).data().to_vec());
            out.vab_probs.push(softmax(g.value(trace.vab_logits).data()));
            out.lab_probs.push(softmax(g.value(trace.lab_logits).data()));
            let p = softmax(g.value(trace.gen_logits).data());
            let next = argmax(&p) as u32;
            out.gen_probs.push(p);
            fed.push(input);
            if next == EOS {
                out.truncated = false;
                break;
            }
            out.ids.push(next);
            input = next;
        }
        Ok(out)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.ids().map(|id| self.params.get(id).len()).sum()
    }
}

fn argmax_rows(t: &Tensor) -> Vec<usize> {
    let v = t.last_dim();
    (0..t.len() / v).map(|r| argmax(t.row(r))).collect()
}

/// Seeded random number generator shared by every stochastic component.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
