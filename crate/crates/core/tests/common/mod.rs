//! Independent oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use meprop::layers::activation::Activation;
use meprop::layers::linear::{
    linear_backward_full, linear_backward_meprop, linear_forward, LayerGradients, LinearLayer,
    WeightGrad,
};
use meprop::layers::loss::softmax_cross_entropy;
use meprop::layers::mlp::Mlp;
use meprop::layers::tagger::BiLstmTagger;
use meprop::numerics::{densify, FlopCounter, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
/// Gradients smaller than this are compared on an absolute scale.
pub const REL_FLOOR: f64 = 1e-4;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

pub fn dense_dw(g: &LayerGradients) -> Matrix {
    match &g.dw {
        WeightGrad::Dense(m) => m.clone(),
        WeightGrad::Sparse(s) => densify(s),
    }
}

/// Top-k by a full sort: larger magnitude first, lower index on ties.
pub fn topk_by_sort(v: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[b].abs().total_cmp(&v[a].abs()).then(a.cmp(&b)));
    idx.truncate(k);
    idx.sort_unstable();
    idx
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Random gradient; every other call quantises it so that ties occur.
pub fn random_grad(rng: &mut ChaCha8Rng, n: usize, ties: bool) -> Vec<f64> {
    let v = random_vec(rng, n);
    if ties {
        v.into_iter().map(|x| (x * 4.0).round() / 4.0).collect()
    } else {
        v
    }
}

/// One meProp-versus-oracle comparison on a random `n × m` layer.
/// Returns (exact match with dense-then-mask, max |k=n − full| difference).
pub fn meprop_oracle_case(seed: u64) -> (bool, f64, (usize, usize, usize)) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=64);
    let m = rng.random_range(1..=64);
    let k = rng.random_range(1..=n);
    let mut init = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let layer = LinearLayer::init(m, n, None, &mut init);
    let x = random_vec(&mut rng, m);
    let g = random_grad(&mut rng, n, seed % 2 == 0);
    let mut f = FlopCounter::new();
    let (_, cache) = linear_forward(&layer, &x, &mut f).unwrap();

    let sparse = linear_backward_meprop(&layer, &cache, &g, k, &mut f).unwrap();
    let keep = topk_by_sort(&g, k);
    let masked: Vec<f64> = (0..n).map(|i| if keep.contains(&i) { g[i] } else { 0.0 }).collect();
    let dense = linear_backward_full(&layer, &cache, &g, &mut f).unwrap();
    let mut dw_oracle = dense_dw(&dense);
    for i in 0..n {
        if !keep.contains(&i) {
            dw_oracle.row_mut(i).fill(0.0);
        }
    }
    let dx_oracle = linear_backward_full(&layer, &cache, &masked, &mut f).unwrap().dx;
    let exact = dense_dw(&sparse) == dw_oracle
        && sparse.db.as_slice() == masked.as_slice()
        && sparse.dx == dx_oracle
        && sparse.selected.as_ref().map(|s| s.indices().to_vec()) == Some(keep);

    let all = linear_backward_meprop(&layer, &cache, &g, n, &mut f).unwrap();
    let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    let gap = diff(dense_dw(&all).as_slice(), dense_dw(&dense).as_slice())
        .max(diff(all.db.as_slice(), dense.db.as_slice()))
        .max(diff(all.dx.as_slice(), dense.dx.as_slice()));
    (exact, gap, (n, m, k))
}

fn mlp_loss(model: &Mlp, x: &Matrix, y: &[usize]) -> f64 {
    let logits = model.predict_batch(x).unwrap();
    y.iter()
        .enumerate()
        .map(|(b, &t)| softmax_cross_entropy(logits.row(b), t).unwrap().0)
        .sum::<f64>()
        / y.len() as f64
}

/// Largest relative error between batch back propagation and central
/// differences over every MLP parameter.
pub fn mlp_gradcheck(seed: u64, act: Activation) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = Mlp::new(5, &[7, 6], 4, act, None, &mut rng).unwrap();
    // Zero biases put dead-input examples exactly on the ReLU kink.
    for layer in &mut model.layers {
        for b in &mut layer.bias {
            *b = rng.random_range(-0.3..0.3);
        }
    }
    let x = Matrix::from_fn(3, 5, |_, _| rng.random_range(-1.0..1.0));
    let y: Vec<usize> = (0..3).map(|_| rng.random_range(0..4)).collect();
    let trace = model.forward_batch(&x, &mut rng, None, &mut FlopCounter::new()).unwrap();
    let grads = model.backward_batch(&trace, &y, &mut FlopCounter::new()).unwrap();
    let mut worst: f64 = 0.0;
    for l in 0..model.layers.len() {
        let step = grads.layers[l].clone();
        assert!(step.rows.is_full());
        let m = model.layers[l].inputs();
        for i in 0..model.layers[l].outputs() {
            for j in 0..=m {
                let analytic = if j < m { step.dw.get(i, j) } else { step.db[i] };
                let probe = |model: &mut Mlp, delta: f64| {
                    let layer = &mut model.layers[l];
                    if j < m {
                        let v = layer.weight.get(i, j);
                        layer.weight.set(i, j, v + delta);
                    } else {
                        layer.bias[i] += delta;
                    }
                };
                probe(&mut model, FD_STEP);
                let up = mlp_loss(&model, &x, &y);
                probe(&mut model, -2.0 * FD_STEP);
                let down = mlp_loss(&model, &x, &y);
                probe(&mut model, FD_STEP);
                worst = worst.max(rel_err(analytic, (up - down) / (2.0 * FD_STEP)));
            }
        }
    }
    worst
}

fn tagger_loss(t: &BiLstmTagger, seqs: &[(Vec<usize>, Vec<usize>)]) -> f64 {
    seqs.iter().map(|(x, y)| t.loss(x, y).unwrap()).sum()
}

/// Same check for every parameter slot of the bidirectional LSTM tagger.
pub fn lstm_gradcheck(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = BiLstmTagger::init(6, 3, 4, 5, None, &mut rng);
    // Non-zero biases so every bias gradient path is exercised away from 0.
    for slot in 0..t.num_slots() {
        for v in t.slot_mut(slot) {
            *v += rng.random_range(-0.3..0.3);
        }
    }
    let seqs: Vec<(Vec<usize>, Vec<usize>)> = (0..2)
        .map(|_| {
            let len = rng.random_range(1..=5);
            let x = (0..len).map(|_| rng.random_range(0..6)).collect();
            let y = (0..len).map(|_| rng.random_range(0..5)).collect();
            (x, y)
        })
        .collect();
    let mut acc = t.zero_grads();
    for (x, y) in &seqs {
        let trace = t.forward(x, &mut FlopCounter::new()).unwrap();
        t.backward(&trace, y, 1.0, &mut acc, &mut FlopCounter::new()).unwrap();
    }
    let mut worst: f64 = 0.0;
    for slot in 0..t.num_slots() {
        for i in 0..t.slot_mut(slot).len() {
            let analytic = acc.slots[slot][i];
            t.slot_mut(slot)[i] += FD_STEP;
            let up = tagger_loss(&t, &seqs);
            t.slot_mut(slot)[i] -= 2.0 * FD_STEP;
            let down = tagger_loss(&t, &seqs);
            t.slot_mut(slot)[i] += FD_STEP;
            worst = worst.max(rel_err(analytic, (up - down) / (2.0 * FD_STEP)));
        }
    }
    worst
}
