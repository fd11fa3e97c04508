//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation of one forward pass. Parameters enter
//! as leaves bound to a [`ParamStore`]; [`Graph::backward`] walks the tape in
//! reverse and returns [`Gradients`] aligned with that store. Tensors follow
//! a channels-last layout: `[batch, ..., features]`.

use super::params::{BnObservation, BufferId, BufferStore, Gradients, ParamId, ParamStore};
use super::tensor::{softmax, Tensor};

/// Lower bound applied to probabilities inside `ln`.
pub const LOG_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm; observations are recorded.
    Train,
    /// Running statistics in batch norm.
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

type BackwardFn = Box<dyn Fn(&Tensor) -> Vec<Tensor> + Send + Sync>;

struct Node {
    value: Tensor,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
    param: Option<ParamId>,
}

pub struct Graph<'a> {
    nodes: Vec<Node>,
    params: &'a ParamStore,
    buffers: &'a BufferStore,
    param_vars: Vec<Option<Var>>,
    mode: Mode,
    bn_eps: f64,
    observations: Vec<BnObservation>,
}

impl<'a> Graph<'a> {
    pub fn new(params: &'a ParamStore, buffers: &'a BufferStore, mode: Mode) -> Self {
        Self {
            nodes: Vec::new(),
            params,
            buffers,
            param_vars: vec![None; params.len()],
            mode,
            bn_eps: 1e-5,
            observations: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Batch-norm statistics observed so far (training mode only).
    pub fn bn_observations(&self) -> &[BnObservation] {
        &self.observations
    }

    pub fn take_bn_observations(&mut self) -> Vec<BnObservation> {
        std::mem::take(&mut self.observations)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool, param: Option<ParamId>) -> Var {
        self.nodes.push(Node { value, parents: Vec::new(), backward: None, requires_grad, param });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, parents: &[Var], backward: impl Fn(&Tensor) -> Vec<Tensor> + Send + Sync + 'static) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            parents: parents.iter().map(|p| p.0).collect(),
            backward: requires_grad.then(|| Box::new(backward) as BackwardFn),
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs_grad(&self, parents: &[Var]) -> bool {
        parents.iter().any(|p| self.nodes[p.0].requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false, None)
    }

    /// Leaf for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let value = self.params.get(id).clone();
        let trainable = self.params.is_trainable(id);
        let v = self.push_leaf(value, trainable, Some(id));
        self.param_vars[id.0] = Some(v);
        v
    }

    /// `x · w + b` over the last axis of `x`. `w` is `[in, out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let (xt, wt) = (self.value(x).clone(), self.value(w).clone());
        let (din, dout) = (wt.shape()[0], wt.shape()[1]);
        assert_eq!(xt.last_dim(), din, "linear: input width {} vs weight {:?}", xt.last_dim(), wt.shape());
        let rows = xt.len() / din;
        let mut out = vec![0.0; rows * dout];
        if let Some(b) = b {
            let bt = self.value(b);
            assert_eq!(bt.len(), dout);
            for r in 0..rows {
                out[r * dout..(r + 1) * dout].copy_from_slice(bt.data());
            }
        }
        let (xd, wd) = (xt.data(), wt.data());
        for r in 0..rows {
            let orow = &mut out[r * dout..(r + 1) * dout];
            for i in 0..din {
                let xi = xd[r * din + i];
                if xi == 0.0 {
                    continue;
                }
                for (o, &wv) in orow.iter_mut().zip(&wd[i * dout..(i + 1) * dout]) {
                    *o += xi * wv;
                }
            }
        }
        let mut shape = xt.shape().to_vec();
        *shape.last_mut().unwrap() = dout;
        let value = Tensor::from_vec(&shape, out);
        let mut parents = vec![x, w];
        parents.extend(b);
        if !self.needs_grad(&parents) {
            return self.push_leaf(value, false, None);
        }
        let has_bias = b.is_some();
        self.push(value, &parents, move |g| {
            let gd = g.data();
            let (xd, wd) = (xt.data(), wt.data());
            let mut dx = vec![0.0; xd.len()];
            let mut dw = vec![0.0; wd.len()];
            for r in 0..rows {
                let grow = &gd[r * dout..(r + 1) * dout];
                for i in 0..din {
                    let wrow = &wd[i * dout..(i + 1) * dout];
                    dx[r * din + i] = grow.iter().zip(wrow).map(|(a, b)| a * b).sum();
                    let xi = xd[r * din + i];
                    if xi != 0.0 {
                        for (d, &gv) in dw[i * dout..(i + 1) * dout].iter_mut().zip(grow) {
                            *d += xi * gv;
                        }
                    }
                }
            }
            let mut grads = vec![Tensor::from_vec(xt.shape(), dx), Tensor::from_vec(wt.shape(), dw)];
            if has_bias {
                let mut db = vec![0.0; dout];
                for r in 0..rows {
                    for (d, &gv) in db.iter_mut().zip(&gd[r * dout..(r + 1) * dout]) {
                        *d += gv;
                    }
                }
                grads.push(Tensor::from_vec(&[dout], db));
            }
            grads
        })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(value, &[a, b], |g| vec![g.clone(), g.clone()])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (at, bt) = (self.value(a).clone(), self.value(b).clone());
        let value = at.zip_map(&bt, |x, y| x * y);
        self.push(value, &[a, b], move |g| vec![g.zip_map(&bt, |g, y| g * y), g.zip_map(&at, |g, x| g * x)])
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let value = self.value(x).map(|v| v * factor);
        self.push(value, &[x], move |g| vec![g.map(|v| v * factor)])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| 1.0 / (1.0 + (-v).exp()));
        let saved = y.clone();
        self.push(y, &[x], move |g| vec![g.zip_map(&saved, |g, y| g * y * (1.0 - y))])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let y = self.value(x).map(f64::tanh);
        let saved = y.clone();
        self.push(y, &[x], move |g| vec![g.zip_map(&saved, |g, y| g * (1.0 - y * y))])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let xt = self.value(x).clone();
        let y = xt.map(|v| v.max(0.0));
        self.push(y, &[x], move |g| vec![g.zip_map(&xt, |g, x| if x > 0.0 { g } else { 0.0 })])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let old = self.shape(x).to_vec();
        let value = self.value(x).clone().reshape(shape);
        self.push(value, &[x], move |g| vec![g.clone().reshape(&old)])
    }

    /// Columns `start..start + len` of the last axis.
    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xt = self.value(x);
        let w = xt.last_dim();
        assert!(start + len <= w, "slice {start}+{len} out of width {w}");
        let rows = xt.len() / w;
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&xt.data()[r * w + start..r * w + start + len]);
        }
        let in_shape = xt.shape().to_vec();
        let mut shape = in_shape.clone();
        *shape.last_mut().unwrap() = len;
        self.push(Tensor::from_vec(&shape, out), &[x], move |g| {
            let mut dx = Tensor::zeros(&in_shape);
            for r in 0..rows {
                dx.data_mut()[r * w + start..r * w + start + len].copy_from_slice(&g.data()[r * len..(r + 1) * len]);
            }
            vec![dx]
        })
    }

    /// Concatenation along the last axis; leading axes must agree.
    pub fn concat_last(&mut self, parts: &[Var]) -> Var {
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).last_dim()).collect();
        let lead = self.shape(parts[0])[..self.shape(parts[0]).len() - 1].to_vec();
        for &p in parts {
            let s = self.shape(p);
            assert_eq!(&s[..s.len() - 1], lead.as_slice(), "concat_last: leading shapes differ");
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut out = vec![0.0; rows * total];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let d = self.value(p).data();
            for r in 0..rows {
                out[r * total + offset..r * total + offset + w].copy_from_slice(&d[r * w..(r + 1) * w]);
            }
            offset += w;
        }
        let mut shape = lead.clone();
        shape.push(total);
        self.push(Tensor::from_vec(&shape, out), parts, move |g| {
            let mut offset = 0;
            widths
                .iter()
                .map(|&w| {
                    let mut d = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        d.extend_from_slice(&g.data()[r * total + offset..r * total + offset + w]);
                    }
                    offset += w;
                    let mut s = lead.clone();
                    s.push(w);
                    Tensor::from_vec(&s, d)
                })
                .collect()
        })
    }

    /// Stacks `[B, F]` tensors into `[B, len, F]`.
    pub fn stack_middle(&mut self, parts: &[Var]) -> Var {
        let s = self.shape(parts[0]).to_vec();
        assert_eq!(s.len(), 2, "stack_middle expects [B, F] parts");
        let (b, f, n) = (s[0], s[1], parts.len());
        let mut out = vec![0.0; b * n * f];
        for (j, &p) in parts.iter().enumerate() {
            assert_eq!(self.shape(p), s.as_slice(), "stack_middle: shape mismatch");
            let d = self.value(p).data();
            for r in 0..b {
                out[(r * n + j) * f..(r * n + j + 1) * f].copy_from_slice(&d[r * f..(r + 1) * f]);
            }
        }
        self.push(Tensor::from_vec(&[b, n, f], out), parts, move |g| {
            (0..n)
                .map(|j| {
                    let mut d = Vec::with_capacity(b * f);
                    for r in 0..b {
                        d.extend_from_slice(&g.data()[(r * n + j) * f..(r * n + j + 1) * f]);
                    }
                    Tensor::from_vec(&[b, f], d)
                })
                .collect()
        })
    }

    /// Repeats `[B, F]` over the given middle dimensions: `[B, dims.., F]`.
    pub fn broadcast_middle(&mut self, x: Var, dims: &[usize]) -> Var {
        let s = self.shape(x).to_vec();
        assert_eq!(s.len(), 2);
        let (b, f) = (s[0], s[1]);
        let p: usize = dims.iter().product();
        let xd = self.value(x).data().to_vec();
        let mut out = Vec::with_capacity(b * p * f);
        for r in 0..b {
            for _ in 0..p {
                out.extend_from_slice(&xd[r * f..(r + 1) * f]);
            }
        }
        let mut shape = vec![b];
        shape.extend_from_slice(dims);
        shape.push(f);
        self.push(Tensor::from_vec(&shape, out), &[x], move |g| {
            let mut dx = vec![0.0; b * f];
            for r in 0..b {
                for q in 0..p {
                    for c in 0..f {
                        dx[r * f + c] += g.data()[(r * p + q) * f + c];
                    }
                }
            }
            vec![Tensor::from_vec(&[b, f], dx)]
        })
    }

    /// Mean over all middle axes: `[B, .., C] -> [B, C]`.
    pub fn mean_middle(&mut self, x: Var) -> Var {
        let s = self.shape(x).to_vec();
        let (b, c) = (s[0], *s.last().unwrap());
        let p = self.value(x).len() / (b * c);
        let xd = self.value(x).data();
        let mut out = vec![0.0; b * c];
        for r in 0..b {
            for q in 0..p {
                for k in 0..c {
                    out[r * c + k] += xd[(r * p + q) * c + k];
                }
            }
        }
        let inv = 1.0 / p as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        self.push(Tensor::from_vec(&[b, c], out), &[x], move |g| {
            let mut dx = Vec::with_capacity(b * p * c);
            for r in 0..b {
                for _ in 0..p {
                    dx.extend(g.data()[r * c..(r + 1) * c].iter().map(|v| v * inv));
                }
            }
            vec![Tensor::from_vec(&s, dx)]
        })
    }

    /// `(1 + w) ⊙ x` where each weight scales one row of the last axis of `x`.
    pub fn residual_scale(&mut self, w: Var, x: Var) -> Var {
        let (wt, xt) = (self.value(w).clone(), self.value(x).clone());
        let c = xt.last_dim();
        assert_eq!(wt.len() * c, xt.len(), "residual_scale: {:?} vs {:?}", wt.shape(), xt.shape());
        let mut out = xt.data().to_vec();
        for (p, &wv) in wt.data().iter().enumerate() {
            for v in &mut out[p * c..(p + 1) * c] {
                *v *= 1.0 + wv;
            }
        }
        let value = Tensor::from_vec(xt.shape(), out);
        self.push(value, &[w, x], move |g| {
            let mut dw = vec![0.0; wt.len()];
            let mut dx = g.data().to_vec();
            for (p, &wv) in wt.data().iter().enumerate() {
                let gr = &g.data()[p * c..(p + 1) * c];
                dw[p] = gr.iter().zip(xt.row(p)).map(|(a, b)| a * b).sum();
                for v in &mut dx[p * c..(p + 1) * c] {
                    *v *= 1.0 + wv;
                }
            }
            vec![Tensor::from_vec(wt.shape(), dw), Tensor::from_vec(xt.shape(), dx)]
        })
    }

    /// Stride-1 convolution with zero "same" padding over `[B, H, W, Ci]`.
    /// The kernel is `[KH, KW, Ci, Co]` with odd spatial extents.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (xt, wt) = (self.value(x).clone(), self.value(w).clone());
        let [bn, h, wd, ci]: [usize; 4] = xt.shape().try_into().expect("conv2d input must be 4-D");
        let [kh, kw, kci, co]: [usize; 4] = wt.shape().try_into().expect("conv2d kernel must be 4-D");
        assert_eq!(ci, kci, "conv2d channel mismatch");
        assert!(kh % 2 == 1 && kw % 2 == 1);
        let (ph, pw) = (kh / 2, kw / 2);
        let bias = self.value(b).data().to_vec();
        assert_eq!(bias.len(), co);
        let mut out = vec![0.0; bn * h * wd * co];
        let (xd, kd) = (xt.data(), wt.data());
        for n in 0..bn {
            for y in 0..h {
                for xx in 0..wd {
                    let o = ((n * h + y) * wd + xx) * co;
                    out[o..o + co].copy_from_slice(&bias);
                    for ky in 0..kh {
                        let iy = y as isize + ky as isize - ph as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = xx as isize + kx as isize - pw as isize;
                            if ix < 0 || ix >= wd as isize {
                                continue;
                            }
                            let i = ((n * h + iy as usize) * wd + ix as usize) * ci;
                            let k = (ky * kw + kx) * ci * co;
                            for c in 0..ci {
                                let v = xd[i + c];
                                if v == 0.0 {
                                    continue;
                                }
                                let krow = &kd[k + c * co..k + (c + 1) * co];
                                for (ov, &kv) in out[o..o + co].iter_mut().zip(krow) {
                                    *ov += v * kv;
                                }
                            }
                        }
                    }
                }
            }
        }
        let value = Tensor::from_vec(&[bn, h, wd, co], out);
        self.push(value, &[x, w, b], move |g| {
            let gd = g.data();
            let (xd, kd) = (xt.data(), wt.data());
            let mut dx = vec![0.0; xd.len()];
            let mut dk = vec![0.0; kd.len()];
            let mut db = vec![0.0; co];
            for n in 0..bn {
                for y in 0..h {
                    for xx in 0..wd {
                        let o = ((n * h + y) * wd + xx) * co;
                        let grow = &gd[o..o + co];
                        for (d, &gv) in db.iter_mut().zip(grow) {
                            *d += gv;
                        }
                        for ky in 0..kh {
                            let iy = y as isize + ky as isize - ph as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = xx as isize + kx as isize - pw as isize;
                                if ix < 0 || ix >= wd as isize {
                                    continue;
                                }
                                let i = ((n * h + iy as usize) * wd + ix as usize) * ci;
                                let k = (ky * kw + kx) * ci * co;
                                for c in 0..ci {
                                    let krow = &kd[k + c * co..k + (c + 1) * co];
                                    dx[i + c] += grow.iter().zip(krow).map(|(a, b)| a * b).sum::<f64>();
                                    let v = xd[i + c];
                                    if v != 0.0 {
                                        for (d, &gv) in dk[k + c * co..k + (c + 1) * co].iter_mut().zip(grow) {
                                            *d += v * gv;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            vec![
                Tensor::from_vec(xt.shape(), dx),
                Tensor::from_vec(wt.shape(), dk),
                Tensor::from_vec(&[co], db),
            ]
        })
    }

    /// Per-channel batch normalization over every position of the active
    /// batch rows. `active` has one flag per leading index; inactive rows are
    /// normalized with the same statistics but do not contribute to them.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, buffer: BufferId, active: &[bool]) -> Var {
        let xt = self.value(x).clone();
        let c = xt.last_dim();
        let b = xt.shape()[0];
        assert_eq!(active.len(), b, "batch_norm: mask length");
        let p = xt.len() / (b * c);
        let gt = self.value(gamma).data().to_vec();
        let bt = self.value(beta).data().to_vec();
        let eps = self.bn_eps;

        let batch_stats = self.mode == Mode::Train;
        let (mean, var) = if batch_stats {
            let count = active.iter().filter(|&&a| a).count() * p;
            assert!(count > 0, "batch_norm: no active rows");
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for r in (0..b).filter(|&r| active[r]) {
                for q in 0..p {
                    for k in 0..c {
                        mean[k] += xt.data()[(r * p + q) * c + k];
                    }
                }
            }
            mean.iter_mut().for_each(|m| *m /= count as f64);
            for r in (0..b).filter(|&r| active[r]) {
                for q in 0..p {
                    for k in 0..c {
                        let d = xt.data()[(r * p + q) * c + k] - mean[k];
                        var[k] += d * d;
                    }
                }
            }
            var.iter_mut().for_each(|v| *v /= count as f64);
            self.observations.push(BnObservation { buffer, mean: mean.clone(), var: var.clone() });
            (mean, var)
        } else {
            (self.buffers.mean(buffer).to_vec(), self.buffers.var(buffer).to_vec())
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![0.0; xt.len()];
        let mut out = vec![0.0; xt.len()];
        for (i, (&xv, (xh, o))) in xt.data().iter().zip(xhat.iter_mut().zip(out.iter_mut())).enumerate() {
            let k = i % c;
            *xh = (xv - mean[k]) * inv_std[k];
            *o = gt[k] * *xh + bt[k];
        }
        let shape = xt.shape().to_vec();
        let active = active.to_vec();
        self.push(Tensor::from_vec(&shape, out), &[x, gamma, beta], move |g| {
            let gd = g.data();
            let mut dgamma = vec![0.0; c];
            let mut dbeta = vec![0.0; c];
            for (i, &gv) in gd.iter().enumerate() {
                dgamma[i % c] += gv * xhat[i];
                dbeta[i % c] += gv;
            }
            let mut dx = vec![0.0; gd.len()];
            if batch_stats {
                let count = (active.iter().filter(|&&a| a).count() * p) as f64;
                // sums of dxhat and dxhat·xhat over the rows that defined the statistics
                let mut s1 = vec![0.0; c];
                let mut s2 = vec![0.0; c];
                for r in (0..b).filter(|&r| active[r]) {
                    for q in 0..p {
                        for k in 0..c {
                            let i = (r * p + q) * c + k;
                            let dxh = gd[i] * gt[k];
                            s1[k] += dxh;
                            s2[k] += dxh * xhat[i];
                        }
                    }
                }
                for r in 0..b {
                    for q in 0..p {
                        for k in 0..c {
                            let i = (r * p + q) * c + k;
                            let dxh = gd[i] * gt[k];
                            dx[i] = if active[r] {
                                inv_std[k] * (dxh - s1[k] / count - xhat[i] * s2[k] / count)
                            } else {
                                inv_std[k] * dxh
                            };
                        }
                    }
                }
            } else {
                for (i, d) in dx.iter_mut().enumerate() {
                    *d = gd[i] * gt[i % c] * inv_std[i % c];
                }
            }
            vec![Tensor::from_vec(&shape, dx), Tensor::from_vec(&[c], dgamma), Tensor::from_vec(&[c], dbeta)]
        })
    }

    /// Rows of `table` selected by `ids`: `[ids.len(), E]`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Var {
        let tt = self.value(table);
        let e = tt.last_dim();
        let v = tt.shape()[0];
        let mut out = Vec::with_capacity(ids.len() * e);
        for &id in ids {
            assert!(id < v, "gather_rows: id {id} out of {v}");
            out.extend_from_slice(tt.row(id));
        }
        let tshape = tt.shape().to_vec();
        let ids = ids.to_vec();
        self.push(Tensor::from_vec(&[ids.len(), e], out), &[table], move |g| {
            let mut dt = Tensor::zeros(&tshape);
            for (r, &id) in ids.iter().enumerate() {
                for k in 0..e {
                    dt.data_mut()[id * e + k] += g.data()[r * e + k];
                }
            }
            vec![dt]
        })
    }

    /// `Σ_r weight_r · −ln max(softmax(logits_r)[label_r], LOG_EPS)` as a scalar.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize], weights: &[f64]) -> Var {
        let lt = self.value(logits);
        let v = lt.last_dim();
        let rows = lt.len() / v;
        assert_eq!(labels.len(), rows);
        assert_eq!(weights.len(), rows);
        let mut probs = Vec::with_capacity(rows * v);
        let mut loss = 0.0;
        for r in 0..rows {
            let p = softmax(lt.row(r));
            if weights[r] != 0.0 {
                loss += weights[r] * cross_entropy(&p, labels[r]);
            }
            probs.extend(p);
        }
        let lshape = lt.shape().to_vec();
        let labels = labels.to_vec();
        let weights = weights.to_vec();
        self.push(Tensor::scalar(loss), &[logits], move |g| {
            let gs = g.item();
            let mut d = vec![0.0; probs.len()];
            for r in 0..rows {
                let p = &probs[r * v..(r + 1) * v];
                if weights[r] == 0.0 || p[labels[r]] < LOG_EPS {
                    continue;
                }
                let s = gs * weights[r];
                for k in 0..v {
                    d[r * v + k] = s * p[k];
                }
                d[r * v + labels[r]] -= s;
            }
            vec![Tensor::from_vec(&lshape, d)]
        })
    }

    /// Sum of scalars, evaluated left to right.
    pub fn sum_scalars(&mut self, parts: &[Var]) -> Var {
        let mut total = 0.0;
        for &p in parts {
            total += self.value(p).item();
        }
        let n = parts.len();
        self.push(Tensor::scalar(total), parts, move |g| vec![g.clone(); n])
    }

    /// Reverse pass from a scalar output.
    pub fn backward(&self, output: Var) -> Gradients {
        assert_eq!(self.value(output).len(), 1, "backward needs a scalar output");
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Tensor::full(self.value(output).shape(), 1.0));
        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            let Some(g) = grads[i].take() else { continue };
            if let Some(backward) = &node.backward {
                let parent_grads = backward(&g);
                debug_assert_eq!(parent_grads.len(), node.parents.len());
                for (&p, pg) in node.parents.iter().zip(parent_grads) {
                    if !self.nodes[p].requires_grad {
                        continue;
                    }
                    match &mut grads[p] {
                        Some(acc) => acc.add_assign(&pg),
                        slot @ None => *slot = Some(pg),
                    }
                }
            }
            if node.param.is_some() {
                grads[i] = Some(g);
            }
        }
        let mut out = vec![None; self.params.len()];
        for (pid, var) in self.param_vars.iter().enumerate() {
            if let Some(v) = var {
                out[pid] = grads[v.0].take();
            }
        }
        Gradients { grads: out }
    }
}

/// `−ln max(p[label], LOG_EPS)`.
pub fn cross_entropy(probs: &[f64], label: usize) -> f64 {
    -probs[label].max(LOG_EPS).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(values: &[(&str, Tensor)]) -> ParamStore {
        let mut s = ParamStore::new();
        for (n, t) in values {
            s.add(*n, t.clone(), true);
        }
        s
    }

    #[test]
    fn linear_forward_matches_hand_product() {
        let params = store_with(&[
            ("w", Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0])),
            ("b", Tensor::from_vec(&[3], vec![0.5, 0.0, -0.5])),
        ]);
        let buffers = BufferStore::new();
        let mut g = Graph::new(&params, &buffers, Mode::Eval);
        let x = g.constant(Tensor::from_vec(&[1, 2], vec![1.0, -1.0]));
        let (w, b) = (g.param(ParamId(0)), g.param(ParamId(1)));
        let y = g.linear(x, w, Some(b));
        assert_eq!(g.value(y).data(), &[-2.5, -3.0, -3.5]);
    }

    #[test]
    fn residual_scale_with_zero_weights_is_identity() {
        let params = ParamStore::new();
        let buffers = BufferStore::new();
        let mut g = Graph::new(&params, &buffers, Mode::Eval);
        let x = g.constant(Tensor::from_vec(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        let w = g.constant(Tensor::zeros(&[1, 2]));
        let y = g.residual_scale(w, x);
        assert_eq!(g.value(y), g.value(x));
    }

    #[test]
    fn cross_entropy_is_clamped() {
        assert_eq!(cross_entropy(&[1.0, 0.0], 1), -LOG_EPS.ln());
        assert_eq!(cross_entropy(&[1.0, 0.0], 0), 0.0);
    }

    #[test]
    fn shared_param_accumulates_gradient() {
        let params = store_with(&[("a", Tensor::from_vec(&[1], vec![3.0]))]);
        let buffers = BufferStore::new();
        let mut g = Graph::new(&params, &buffers, Mode::Eval);
        let a = g.param(ParamId(0));
        let a2 = g.param(ParamId(0));
        let y = g.mul(a, a2);
        let y = g.reshape(y, &[]);
        let grads = g.backward(y);
        assert_eq!(grads.get(ParamId(0)).unwrap().data(), &[6.0]);
    }
}
