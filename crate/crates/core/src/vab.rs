//! Visual attention branch.
//!
//! The previous hidden state is projected to `C` channels, tiled over the
//! pooled `3 × 3` grid and concatenated with the visual map. Three
//! conv/BN/ReLU blocks follow. A fourth 3×3 convolution to `V` channels with
//! global average pooling gives the branch's own subword logits, and a 1×1
//! convolution to one channel with a sigmoid gives the attention map `A`.
//! The map reweights the visual features as `(1 + A) ⊙ x` before pooling them
//! into the vector fed to the decoder.

use rand::Rng;

use crate::layers::{BatchNorm, Conv, Dense};
use crate::nn::{BufferStore, Graph, ParamStore, Var};

pub const VAB_BLOCKS: usize = 3;

#[derive(Debug, Clone)]
pub struct VisualAttentionBranch {
    pub hidden_proj: Dense,
    pub convs: Vec<Conv>,
    pub norms: Vec<BatchNorm>,
    pub classifier: Conv,
    pub attention: Dense,
    pub channels: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct VabOutput {
    /// `[B, V]`.
    pub logits: Var,
    /// `[B, 3, 3, 1]`, in (0, 1).
    pub attention: Var,
    /// `[B, C]`.
    pub attended: Var,
}

impl VisualAttentionBranch {
    pub fn register(
        params: &mut ParamStore,
        buffers: &mut BufferStore,
        rng: &mut impl Rng,
        channels: usize,
        hidden: usize,
        vocab: usize,
    ) -> Self {
        let hidden_proj = Dense::register(params, rng, "vab.hproj", hidden, channels);
        let mut convs = Vec::new();
        let mut norms = Vec::new();
        for i in 0..VAB_BLOCKS {
            let cin = if i == 0 { 2 * channels } else { channels };
            convs.push(Conv::register(params, rng, &format!("vab.conv{i}"), [3, 3], cin, channels));
            norms.push(BatchNorm::register(params, buffers, &format!("vab.bn{i}"), channels));
        }
        let classifier = Conv::register(params, rng, "vab.cls", [3, 3], channels, vocab);
        let attention = Dense::register(params, rng, "vab.att", channels, 1);
        Self { hidden_proj, convs, norms, classifier, attention, channels }
    }

    /// `pooled` is `[B, Gh, Gw, C]`, `h_prev` is `[B, d]`.
    pub fn forward(&self, g: &mut Graph, pooled: Var, h_prev: Var, active: &[bool]) -> VabOutput {
        let s = g.shape(pooled).to_vec();
        let (gh, gw) = (s[1], s[2]);
        let hp = self.hidden_proj.forward(g, h_prev);
        let tiled = g.broadcast_middle(hp, &[gh, gw]);
        let mut x = g.concat_last(&[pooled, tiled]);
        for (conv, norm) in self.convs.iter().zip(&self.norms) {
            let c = conv.forward(g, x);
            let n = norm.forward(g, c, active);
            x = g.relu(n);
        }
        let class_map = self.classifier.forward(g, x);
        let logits = g.mean_middle(class_map);
        let raw = self.attention.forward(g, x);
        let attention = g.sigmoid(raw);
        let weighted = g.residual_scale(attention, pooled);
        let attended = g.mean_middle(weighted);
        VabOutput { logits, attention, attended }
    }
}
