//! WebAssembly bindings for the demo page in `www/`.

use meprop::dataio::{split_dev_at, synth_linear_timing, Dataset};
use meprop::layers::activation::Activation;
use meprop::layers::mlp::Mlp;
use meprop::numerics::{top_k_indices, FlopCounter, IndexSet};
use meprop::optimizer::{Adam, AdamConfig};
use meprop::simplifier::{prune_layer, PruneConfig, UpdateCounter};
use meprop::trainer::evaluate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

const FEATURES: usize = 16;
const CLASSES: usize = 4;
const TRAIN: usize = 1000;
const TEST: usize = 300;
const BATCH: usize = 10;

fn js(e: meprop::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Indices of the `k` largest-magnitude entries, ascending.
#[wasm_bindgen]
pub fn top_k(values: &[f64], k: usize) -> Result<Vec<u32>, JsError> {
    select(values, k).map_err(js)
}

fn select(values: &[f64], k: usize) -> meprop::Result<Vec<u32>> {
    Ok(top_k_indices(values, k)?.indices().iter().map(|&i| i as u32).collect())
}

/// Uniform values in `[-1, 1)`, standing in for a gradient vector.
#[wasm_bindgen]
pub fn random_gradient(n: usize, seed: u32) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.into());
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

#[derive(Debug, Serialize)]
pub struct EpochStats {
    pub epoch: u64,
    pub loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub backprop_flops: u64,
    pub full_flops: u64,
    pub sizes: Vec<usize>,
}

#[derive(Debug, Serialize)]
pub struct PruneStats {
    pub removed: Vec<usize>,
    pub sizes: Vec<usize>,
}

/// A two-hidden-layer network on a small synthetic classification task.
#[wasm_bindgen]
pub struct Playground {
    model: Mlp,
    adam: Adam,
    train: Dataset,
    test: Dataset,
    rng: ChaCha8Rng,
    counters: Vec<UpdateCounter>,
    epoch: u64,
}

#[wasm_bindgen]
impl Playground {
    #[wasm_bindgen(constructor)]
    pub fn new(hidden: usize, seed: u32) -> Result<Playground, JsError> {
        Self::build(hidden, seed.into()).map_err(js)
    }

    /// `k = 0` or `k >= size` trains with full back propagation. Clears
    /// the update counters.
    pub fn set_k(&mut self, k: usize) {
        self.model.set_hidden_k((k > 0).then_some(k));
        for (c, n) in self.counters.iter_mut().zip(self.model.hidden_sizes()) {
            c.reset(n);
        }
    }

    /// One pass over the training set; returns `EpochStats` as JSON.
    pub fn train_epoch(&mut self) -> Result<String, JsError> {
        let s = self.epoch_stats().map_err(js)?;
        Ok(serde_json::to_string(&s).unwrap_or_default())
    }

    /// Removes neurons updated in fewer than `rate` of the examples seen
    /// since the last prune; returns `PruneStats` as JSON.
    pub fn prune(&mut self, rate: f64) -> Result<String, JsError> {
        let s = self.prune_stats(rate).map_err(js)?;
        Ok(serde_json::to_string(&s).unwrap_or_default())
    }

    pub fn hidden_sizes(&self) -> Vec<u32> {
        self.model.hidden_sizes().into_iter().map(|s| s as u32).collect()
    }
}

impl Playground {
    pub fn build(hidden: usize, seed: u64) -> meprop::Result<Playground> {
        let all = synth_linear_timing(FEATURES, CLASSES, TRAIN + TEST, seed)?;
        let (train, test) = split_dev_at(&all, TEST)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = Mlp::new(FEATURES, &[hidden, hidden], CLASSES, Activation::Relu, None, &mut rng)?;
        let adam = model.new_optimizer(AdamConfig::default());
        let counters = model.hidden_sizes().into_iter().map(UpdateCounter::new).collect();
        Ok(Playground {
            model,
            adam,
            train,
            test,
            rng,
            counters,
            epoch: 0,
        })
    }

    pub fn epoch_stats(&mut self) -> meprop::Result<EpochStats> {
        let order = meprop::dataio::epoch_order(self.train.len(), 0, self.epoch);
        let (mut loss, mut correct) = (0.0, 0);
        let (mut flops_used, mut flops_full) = (0, 0);
        for idx in order.chunks(BATCH) {
            let (x, y) = self.train.gather(idx);
            let trace = self.model.forward_batch(&x, &mut self.rng, None, &mut FlopCounter::new())?;
            let mut flops = FlopCounter::new();
            let grads = self.model.backward_batch(&trace, &y, &mut flops)?;
            flops_used += flops.get();
            for (l, layer) in self.model.layers.iter().enumerate() {
                let full = (idx.len() * layer.outputs() * layer.inputs()) as u64;
                flops_full += if l > 0 { 2 * full } else { full };
            }
            for (c, step) in self.counters.iter_mut().zip(&grads.layers) {
                match &step.per_example {
                    Some(sets) => sets.iter().try_for_each(|s| c.record(s))?,
                    None => {
                        let all = IndexSet::full(c.len());
                        idx.iter().try_for_each(|_| c.record(&all))?;
                    }
                }
            }
            self.model.apply(&grads, &mut self.adam)?;
            loss += grads.loss_sum;
            correct += grads.correct;
        }
        self.epoch += 1;
        let n = self.train.len() as f64;
        Ok(EpochStats {
            epoch: self.epoch,
            loss: loss / n,
            train_accuracy: correct as f64 / n,
            test_accuracy: evaluate(&self.model, &self.test)?.accuracy,
            backprop_flops: flops_used,
            full_flops: flops_full,
            sizes: self.model.hidden_sizes(),
        })
    }

    pub fn prune_stats(&mut self, rate: f64) -> meprop::Result<PruneStats> {
        let seen = self.counters[0].examples_seen() as usize;
        let config = PruneConfig {
            prune_interval: seen.max(1),
            prune_rate: rate,
            min_keep: 1,
            cycle_epochs: 1,
            simplify_epochs: 1,
        };
        config.validate()?;
        let mut removed = Vec::new();
        for (l, c) in self.counters.iter_mut().enumerate() {
            removed.push(prune_layer(&mut self.model, &mut self.adam, l, c, &config)?.removed.len());
        }
        Ok(PruneStats {
            removed,
            sizes: self.model.hidden_sizes(),
        })
    }
}
