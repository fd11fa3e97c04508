//! Linguistic attention branch.
//!
//! Operates on the last `N` decoder outputs laid out as a `1 × N` map with
//! `d` channels. Slots before the first step are filled with the projected
//! scene encoding. Three 1×3 conv/BN/ReLU blocks produce features from which
//! the branch predicts the next subword (average over slots, then a dense
//! layer) and a per-slot weight `a = σ(BN(w · f))`. The context is reweighted
//! as `(1 + a) ⊙ h` for the generation branch.

use rand::Rng;

use crate::layers::{BatchNorm, Conv, Dense};
use crate::nn::{BufferStore, Graph, ParamStore, Var};

pub const LAB_BLOCKS: usize = 3;

/// Which history entry fills each of the `n` slots, oldest first. `None`
/// marks a slot filled with the projected scene encoding.
pub fn context_slots(history_len: usize, n: usize) -> Vec<Option<usize>> {
    let fill = n.saturating_sub(history_len);
    let start = history_len.saturating_sub(n);
    (0..n).map(|s| if s < fill { None } else { Some(start + s - fill) }).collect()
}

/// Stacks the context window `[B, N, d]` from the decoder history.
pub fn build_context(g: &mut Graph, history: &[Var], projected: Var, n: usize) -> Var {
    let parts: Vec<Var> = context_slots(history.len(), n).into_iter().map(|s| s.map_or(projected, |i| history[i])).collect();
    g.stack_middle(&parts)
}

#[derive(Debug, Clone)]
pub struct LinguisticAttentionBranch {
    pub convs: Vec<Conv>,
    pub norms: Vec<BatchNorm>,
    pub classifier: Dense,
    pub attention: Dense,
    pub attention_norm: BatchNorm,
    pub context: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct LabOutput {
    /// `[B, V]`.
    pub logits: Var,
    /// `[B, N]`, in (0, 1).
    pub weights: Var,
    /// `[B, N, d]`.
    pub weighted: Var,
}

impl LinguisticAttentionBranch {
    pub fn register(
        params: &mut ParamStore,
        buffers: &mut BufferStore,
        rng: &mut impl Rng,
        hidden: usize,
        context: usize,
        vocab: usize,
    ) -> Self {
        let mut convs = Vec::new();
        let mut norms = Vec::new();
        for i in 0..LAB_BLOCKS {
            convs.push(Conv::register(params, rng, &format!("lab.conv{i}"), [1, 3], hidden, hidden));
            norms.push(BatchNorm::register(params, buffers, &format!("lab.bn{i}"), hidden));
        }
        let classifier = Dense::register(params, rng, "lab.cls", hidden, vocab);
        let attention = Dense::register(params, rng, "lab.att", hidden, 1);
        let attention_norm = BatchNorm::register(params, buffers, "lab.att_bn", 1);
        Self { convs, norms, classifier, attention, attention_norm, context }
    }

    /// `context` is `[B, N, d]`.
    pub fn forward(&self, g: &mut Graph, context: Var, active: &[bool]) -> LabOutput {
        let s = g.shape(context).to_vec();
        let (b, n, d) = (s[0], s[1], s[2]);
        let mut x = g.reshape(context, &[b, 1, n, d]);
        let mut features = Vec::with_capacity(LAB_BLOCKS);
        for (conv, norm) in self.convs.iter().zip(&self.norms) {
            let c = conv.forward(g, x);
            let z = norm.forward(g, c, active);
            x = g.relu(z);
            features.push(x);
        }
        let summary = g.mean_middle(x);
        let logits = self.classifier.forward(g, summary);
        let raw = self.attention.forward(g, features[LAB_BLOCKS - 2]);
        let normed = self.attention_norm.forward(g, raw, active);
        let squashed = g.sigmoid(normed);
        let weights = g.reshape(squashed, &[b, n]);
        let weighted = g.residual_scale(weights, context);
        LabOutput { logits, weights, weighted }
    }
}
