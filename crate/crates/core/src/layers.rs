//! Small parameter bundles shared by the branches.

use rand::Rng;

use crate::nn::{xavier_uniform, BufferId, BufferStore, Graph, ParamId, ParamStore, Tensor, Var};

#[derive(Debug, Clone, Copy)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Dense {
    pub fn register(params: &mut ParamStore, rng: &mut impl Rng, name: &str, din: usize, dout: usize) -> Self {
        Self {
            weight: params.add(format!("{name}.w"), xavier_uniform(rng, &[din, dout], din, dout), true),
            bias: params.add(format!("{name}.b"), Tensor::zeros(&[dout]), true),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let (w, b) = (g.param(self.weight), g.param(self.bias));
        g.linear(x, w, Some(b))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Conv {
    /// `[KH, KW, Ci, Co]`.
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Conv {
    pub fn register(params: &mut ParamStore, rng: &mut impl Rng, name: &str, kernel: [usize; 2], cin: usize, cout: usize) -> Self {
        let taps = kernel[0] * kernel[1];
        let weight = xavier_uniform(rng, &[kernel[0], kernel[1], cin, cout], taps * cin, taps * cout);
        Self {
            weight: params.add(format!("{name}.w"), weight, true),
            bias: params.add(format!("{name}.b"), Tensor::zeros(&[cout]), true),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let (w, b) = (g.param(self.weight), g.param(self.bias));
        g.conv2d(x, w, b)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub buffer: BufferId,
}

impl BatchNorm {
    pub fn register(params: &mut ParamStore, buffers: &mut BufferStore, name: &str, channels: usize) -> Self {
        Self {
            gamma: params.add(format!("{name}.gamma"), Tensor::full(&[channels], 1.0), true),
            beta: params.add(format!("{name}.beta"), Tensor::zeros(&[channels]), true),
            buffer: buffers.add(name, channels),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var, active: &[bool]) -> Var {
        let (gamma, beta) = (g.param(self.gamma), g.param(self.beta));
        g.batch_norm(x, gamma, beta, self.buffer, active)
    }
}
