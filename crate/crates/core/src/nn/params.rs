use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named model parameters in registration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    trainable: Vec<bool>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> ParamId {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        self.trainable.push(trainable);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.trainable[id.0]
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.trainable[id.0] = trainable;
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Number of scalar entries in trainable parameters.
    pub fn trainable_count(&self) -> usize {
        self.ids().filter(|&id| self.is_trainable(id)).map(|id| self.get(id).len()).sum()
    }
}

/// Gradients aligned with a [`ParamStore`]; `None` where no gradient flowed.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub(crate) grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn global_norm(&self) -> f64 {
        self.grads.iter().flatten().map(Tensor::sum_squares).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.grads.iter_mut().flatten() {
            for x in g.data_mut() {
                *x *= factor;
            }
        }
    }

    /// Rescales so the global norm is at most `max_norm`; returns the norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm {
            self.scale(max_norm / norm);
        }
        norm
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().flatten().all(Tensor::is_finite)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BufferId(pub(crate) usize);

/// Running batch-norm statistics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BufferStore {
    names: Vec<String>,
    pub(crate) means: Vec<Vec<f64>>,
    pub(crate) vars: Vec<Vec<f64>>,
}

impl BufferStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, channels: usize) -> BufferId {
        self.names.push(name.into());
        self.means.push(vec![0.0; channels]);
        self.vars.push(vec![1.0; channels]);
        BufferId(self.means.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn name(&self, id: BufferId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = BufferId> {
        (0..self.means.len()).map(BufferId)
    }

    pub fn mean(&self, id: BufferId) -> &[f64] {
        &self.means[id.0]
    }

    pub fn var(&self, id: BufferId) -> &[f64] {
        &self.vars[id.0]
    }

    pub fn set(&mut self, id: BufferId, mean: Vec<f64>, var: Vec<f64>) {
        assert_eq!(mean.len(), self.means[id.0].len());
        assert_eq!(var.len(), self.vars[id.0].len());
        self.means[id.0] = mean;
        self.vars[id.0] = var;
    }

    /// Exponential moving average update with the given momentum.
    pub fn update(&mut self, obs: &BnObservation, momentum: f64) {
        let (m, v) = (&mut self.means[obs.buffer.0], &mut self.vars[obs.buffer.0]);
        for (r, &x) in m.iter_mut().zip(&obs.mean) {
            *r = (1.0 - momentum) * *r + momentum * x;
        }
        for (r, &x) in v.iter_mut().zip(&obs.var) {
            *r = (1.0 - momentum) * *r + momentum * x;
        }
    }
}

/// Batch statistics seen by one batch-norm call in training mode.
#[derive(Debug, Clone, PartialEq)]
pub struct BnObservation {
    pub buffer: BufferId,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Glorot-uniform initialization for a weight with the given fans.
pub fn xavier_uniform(rng: &mut impl Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| dist.sample(rng)).collect())
}

/// He-normal initialization.
pub fn he_normal(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| dist.sample(rng)).collect())
}
