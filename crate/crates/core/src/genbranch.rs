//! Generation branch: fuses the current hidden state with the reweighted
//! linguistic context and predicts the next subword. Two dense layers of
//! width `d` with a ReLU between them, then a linear head to `V`.

use rand::Rng;

use crate::layers::Dense;
use crate::nn::{Graph, ParamStore, Var};

/// Width of `[h_k | l_1 .. l_N]`.
pub fn fused_dim(hidden: usize, context: usize) -> usize {
    hidden * (context + 1)
}

#[derive(Debug, Clone)]
pub struct GenerationBranch {
    pub fuse: Dense,
    pub hidden_fc: Dense,
    pub head: Dense,
    pub hidden: usize,
    pub context: usize,
}

impl GenerationBranch {
    pub fn register(params: &mut ParamStore, rng: &mut impl Rng, hidden: usize, context: usize, vocab: usize) -> Self {
        Self {
            fuse: Dense::register(params, rng, "gen.fuse", fused_dim(hidden, context), hidden),
            hidden_fc: Dense::register(params, rng, "gen.fc", hidden, hidden),
            head: Dense::register(params, rng, "gen.head", hidden, vocab),
            hidden,
            context,
        }
    }

    pub fn fuse_inputs(&self, g: &mut Graph, h: Var, weighted: Var) -> Var {
        let b = g.shape(h)[0];
        let flat = g.reshape(weighted, &[b, self.hidden * self.context]);
        g.concat_last(&[h, flat])
    }

    /// `h` is `[B, d]`, `weighted` is `[B, N, d]`; returns `[B, V]` logits.
    pub fn forward(&self, g: &mut Graph, h: Var, weighted: Var) -> Var {
        let fused = self.fuse_inputs(g, h, weighted);
        let z = self.fuse.forward(g, fused);
        let a = g.relu(z);
        let y = self.hidden_fc.forward(g, a);
        self.head.forward(g, y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{BufferStore, Mode, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fused_width() {
        assert_eq!(fused_dim(768, 10), 8448);
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let gen = GenerationBranch::register(&mut params, &mut rng, 3, 2, 5);
        let buffers = BufferStore::new();
        let mut g = Graph::new(&params, &buffers, Mode::Eval);
        let h = g.constant(Tensor::from_vec(&[1, 3], vec![1.0, 2.0, 3.0]));
        let l = g.constant(Tensor::from_vec(&[1, 2, 3], vec![4.0, 5.0, 6.0, 7.0, 8.0, 9.0]));
        let f = gen.fuse_inputs(&mut g, h, l);
        assert_eq!(g.value(f).data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
        let logits = gen.forward(&mut g, h, l);
        assert_eq!(g.shape(logits), &[1, 5]);
    }
}
