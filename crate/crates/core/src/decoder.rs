//! Multi-layer LSTM decoder.
//!
//! The scene encoding is projected to the hidden width; that projection seeds
//! both the hidden and cell state of the first layer (deeper layers start at
//! zero). Each step consumes `[previous subword embedding | attended visual
//! feature]` and emits the top layer's hidden state.

use rand::Rng;

use crate::error::{AbenError, Result};
use crate::nn::{xavier_uniform, Graph, ParamId, ParamStore, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderConfig {
    pub layers: usize,
    pub hidden: usize,
    /// Embedding width plus attended-feature width.
    pub input_dim: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct LstmCell {
    /// `[in, 4·d]`, gate order input, forget, candidate, output.
    pub input_weight: ParamId,
    /// `[d, 4·d]`.
    pub hidden_weight: ParamId,
    pub bias: ParamId,
}

#[derive(Debug, Clone)]
pub struct Decoder {
    pub config: DecoderConfig,
    pub proj_weight: ParamId,
    pub proj_bias: ParamId,
    pub cells: Vec<LstmCell>,
}

/// Per-sequence recurrent state.
#[derive(Debug, Clone)]
pub struct DecoderState {
    /// `(hidden, cell)` per layer, each `[B, d]`.
    pub layers: Vec<(Var, Var)>,
    /// Top-layer outputs `h_1..h_k`.
    pub history: Vec<Var>,
    pub step: usize,
}

impl Decoder {
    pub fn register(params: &mut ParamStore, rng: &mut impl Rng, encoding_dim: usize, config: DecoderConfig) -> Result<Self> {
        if config.layers == 0 || config.hidden == 0 {
            return Err(AbenError::Config(format!("decoder needs layers ≥ 1 and d > 0, got {config:?}")));
        }
        let d = config.hidden;
        let proj_weight = params.add("decoder.proj.w", xavier_uniform(rng, &[encoding_dim, d], encoding_dim, d), true);
        let proj_bias = params.add("decoder.proj.b", Tensor::zeros(&[d]), true);
        let mut cells = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let din = if l == 0 { config.input_dim } else { d };
            let mut bias = Tensor::zeros(&[4 * d]);
            bias.data_mut()[d..2 * d].fill(1.0);
            cells.push(LstmCell {
                input_weight: params.add(format!("decoder.l{l}.wx"), xavier_uniform(rng, &[din, 4 * d], din, d), true),
                hidden_weight: params.add(format!("decoder.l{l}.wh"), xavier_uniform(rng, &[d, 4 * d], d, d), true),
                bias: params.add(format!("decoder.l{l}.b"), bias, true),
            });
        }
        Ok(Self { config, proj_weight, proj_bias, cells })
    }

    /// Learned projection of the scene encoding to the hidden width.
    pub fn project(&self, g: &mut Graph, encoding: Var) -> Var {
        let (w, b) = (g.param(self.proj_weight), g.param(self.proj_bias));
        g.linear(encoding, w, Some(b))
    }

    pub fn init(&self, g: &mut Graph, projected: Var) -> DecoderState {
        let batch = g.shape(projected)[0];
        let d = self.config.hidden;
        let layers = (0..self.config.layers)
            .map(|l| {
                if l == 0 {
                    (projected, projected)
                } else {
                    let z = g.constant(Tensor::zeros(&[batch, d]));
                    (z, z)
                }
            })
            .collect();
        DecoderState { layers, history: Vec::new(), step: 0 }
    }

    /// One step through every layer; appends and returns the top output.
    pub fn step(&self, g: &mut Graph, state: &mut DecoderState, prev_embedding: Var, visual: Var) -> Result<Var> {
        let mut x = g.concat_last(&[prev_embedding, visual]);
        if g.value(x).last_dim() != self.config.input_dim {
            return Err(AbenError::Shape(format!(
                "decoder input width {} but configured {}",
                g.value(x).last_dim(),
                self.config.input_dim
            )));
        }
        let d = self.config.hidden;
        for (cell, slot) in self.cells.iter().zip(state.layers.iter_mut()) {
            let (h, c) = *slot;
            let (wx, wh, b) = (g.param(cell.input_weight), g.param(cell.hidden_weight), g.param(cell.bias));
            let from_input = g.linear(x, wx, Some(b));
            let from_hidden = g.linear(h, wh, None);
            let gates = g.add(from_input, from_hidden);
            let i = g.slice_last(gates, 0, d);
            let f = g.slice_last(gates, d, d);
            let cand = g.slice_last(gates, 2 * d, d);
            let o = g.slice_last(gates, 3 * d, d);
            let (i, f, o) = (g.sigmoid(i), g.sigmoid(f), g.sigmoid(o));
            let cand = g.tanh(cand);
            let keep = g.mul(f, c);
            let write = g.mul(i, cand);
            let c_new = g.add(keep, write);
            let squashed = g.tanh(c_new);
            let h_new = g.mul(o, squashed);
            *slot = (h_new, c_new);
            x = h_new;
        }
        state.history.push(x);
        state.step += 1;
        Ok(x)
    }
}
