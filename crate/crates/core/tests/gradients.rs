//! Analytic gradients against central finite differences.

mod common;

use aben_core::decoder::{Decoder, DecoderConfig};
use aben_core::genbranch::GenerationBranch;
use aben_core::lab::LinguisticAttentionBranch;
use aben_core::model::{Example, InputPolicy};
use aben_core::nn::gradcheck::check_gradients;
use aben_core::nn::{BufferStore, Graph, Mode, ParamStore, Tensor};
use aben_core::vab::VisualAttentionBranch;
use common::{random_features, random_target, rng, toy_model};
use rand::Rng;

const TOL: f64 = 1e-4;
const STEP: f64 = 1e-5;

fn random_tensor(r: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| r.random_range(-1.0..1.0)).collect())
}

/// Weighted sum of the outputs, so every element feeds the loss.
fn probe(g: &mut Graph, out: aben_core::nn::Var, weights: &Tensor) -> aben_core::nn::Var {
    let w = g.constant(weights.clone());
    let prod = g.mul(out, w);
    let flat_len = weights.len();
    let flat = g.reshape(prod, &[1, flat_len]);
    let ones = g.constant(Tensor::full(&[flat_len, 1], 1.0));
    let s = g.linear(flat, ones, None);
    g.reshape(s, &[])
}

fn assert_report(label: &str, report: &aben_core::nn::gradcheck::GradCheckReport) {
    for p in report.params.iter().filter(|p| p.rel_error >= TOL) {
        eprintln!("{label}: {} analytic {:.3e} numeric {:.3e} rel {:.3e}", p.name, p.analytic_norm, p.numeric_norm, p.rel_error);
    }
    let worst = report.worst().expect("parameters checked");
    assert!(report.max_rel_error() < TOL, "{label}: worst {} rel err {:.3e}", worst.name, worst.rel_error);
}

#[test]
fn decoder_gradients() {
    let mut r = rng(1);
    let mut params = ParamStore::new();
    let dec = Decoder::register(&mut params, &mut r, 5, DecoderConfig { layers: 2, hidden: 8, input_dim: 7 }).unwrap();
    let buffers = BufferStore::new();
    let enc = random_tensor(&mut r, &[2, 5]);
    let inputs: Vec<(Tensor, Tensor)> = (0..3).map(|_| (random_tensor(&mut r, &[2, 4]), random_tensor(&mut r, &[2, 3]))).collect();
    let weights = random_tensor(&mut r, &[2, 8]);
    let loss = |p: &ParamStore, backward: bool| {
        let mut g = Graph::new(p, &buffers, Mode::Train);
        let e = g.constant(enc.clone());
        let proj = dec.project(&mut g, e);
        let mut state = dec.init(&mut g, proj);
        let mut h = proj;
        for (emb, vis) in &inputs {
            let a = g.constant(emb.clone());
            let b = g.constant(vis.clone());
            h = dec.step(&mut g, &mut state, a, b).unwrap();
        }
        let out = probe(&mut g, h, &weights);
        let value = g.value(out).item();
        (value, backward.then(|| g.backward(out)))
    };
    let grads = loss(&params, true).1.unwrap();
    let report = check_gradients(&params, &grads, |p| loss(p, false).0, 40, STEP, &mut r);
    assert_report("decoder", &report);
}

#[test]
fn vab_gradients() {
    let mut r = rng(2);
    let mut params = ParamStore::new();
    let mut buffers = BufferStore::new();
    let vab = VisualAttentionBranch::register(&mut params, &mut buffers, &mut r, 4, 6, 5);
    let pooled = random_tensor(&mut r, &[2, 3, 3, 4]);
    let h = random_tensor(&mut r, &[2, 6]);
    let (wl, wa, wv) = (random_tensor(&mut r, &[2, 5]), random_tensor(&mut r, &[2, 3, 3, 1]), random_tensor(&mut r, &[2, 4]));
    let loss = |p: &ParamStore, backward: bool| {
        let mut g = Graph::new(p, &buffers, Mode::Train);
        let x = g.constant(pooled.clone());
        let hv = g.constant(h.clone());
        let out = vab.forward(&mut g, x, hv, &[true, true]);
        let a = probe(&mut g, out.logits, &wl);
        let b = probe(&mut g, out.attention, &wa);
        let c = probe(&mut g, out.attended, &wv);
        let total = g.sum_scalars(&[a, b, c]);
        (g.value(total).item(), backward.then(|| g.backward(total)))
    };
    let grads = loss(&params, true).1.unwrap();
    let report = check_gradients(&params, &grads, |p| loss(p, false).0, 40, STEP, &mut r);
    assert_report("vab", &report);
}

#[test]
fn lab_gradients() {
    let mut r = rng(3);
    let mut params = ParamStore::new();
    let mut buffers = BufferStore::new();
    let lab = LinguisticAttentionBranch::register(&mut params, &mut buffers, &mut r, 5, 3, 7);
    let ctx = random_tensor(&mut r, &[2, 3, 5]);
    let (wl, ww, wo) = (random_tensor(&mut r, &[2, 7]), random_tensor(&mut r, &[2, 3]), random_tensor(&mut r, &[2, 3, 5]));
    let loss = |p: &ParamStore, backward: bool| {
        let mut g = Graph::new(p, &buffers, Mode::Train);
        let c = g.constant(ctx.clone());
        let out = lab.forward(&mut g, c, &[true, true]);
        let a = probe(&mut g, out.logits, &wl);
        let b = probe(&mut g, out.weights, &ww);
        let d = probe(&mut g, out.weighted, &wo);
        let total = g.sum_scalars(&[a, b, d]);
        (g.value(total).item(), backward.then(|| g.backward(total)))
    };
    let grads = loss(&params, true).1.unwrap();
    let report = check_gradients(&params, &grads, |p| loss(p, false).0, 40, STEP, &mut r);
    assert_report("lab", &report);
}

#[test]
fn generation_branch_gradients() {
    let mut r = rng(4);
    let mut params = ParamStore::new();
    let gen = GenerationBranch::register(&mut params, &mut r, 4, 2, 6);
    let buffers = BufferStore::new();
    let h = random_tensor(&mut r, &[3, 4]);
    let l = random_tensor(&mut r, &[3, 2, 4]);
    let loss = |p: &ParamStore, backward: bool| {
        let mut g = Graph::new(p, &buffers, Mode::Train);
        let (hv, lv) = (g.constant(h.clone()), g.constant(l.clone()));
        let logits = gen.forward(&mut g, hv, lv);
        let ce = g.softmax_cross_entropy(logits, &[0, 3, 5], &[1.0, 1.0, 1.0]);
        (g.value(ce).item(), backward.then(|| g.backward(ce)))
    };
    let grads = loss(&params, true).1.unwrap();
    let report = check_gradients(&params, &grads, |p| loss(p, false).0, 60, STEP, &mut r);
    assert_report("generation", &report);
}

#[test]
fn full_model_gradients_over_five_draws() {
    for draw in 0..5u64 {
        let model = toy_model(draw);
        let mut r = rng(1000 + draw);
        let feats: Vec<_> = (0..2).map(|_| random_features(&mut r, 4)).collect();
        let targets = [random_target(&mut r, 3), random_target(&mut r, 1)];
        let batch: Vec<Example> = feats.iter().zip(&targets).map(|(f, t)| Example { features: f, target: t }).collect();
        let loss = |p: &ParamStore, backward: bool| {
            let mut g = Graph::new(p, &model.buffers, Mode::Train);
            let f = model.forward_batch(&mut g, &batch, InputPolicy::TeacherForcing).unwrap();
            (g.value(f.total).item(), backward.then(|| g.backward(f.total)))
        };
        let grads = loss(&model.params, true).1.unwrap();
        let report = check_gradients(&model.params, &grads, |p| loss(p, false).0, 25, STEP, &mut r);
        assert_report(&format!("full model draw {draw}"), &report);
    }
}
