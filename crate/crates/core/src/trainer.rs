//! Mini-batch training and evaluation loops shared by every mode.

use std::time::{Duration, Instant};

use rand::Rng;

use crate::dataio::{epoch_order, Dataset};
use crate::error::Result;
use crate::layers::loss::{argmax, softmax_cross_entropy};
use crate::layers::mlp::{BatchGrads, FrozenUnits, Mlp};
use crate::numerics::FlopCounter;
use crate::optimizer::Adam;

/// Running totals over one epoch of training.
#[derive(Debug, Clone, Default)]
pub struct EpochMeter {
    pub loss_sum: f64,
    pub correct: usize,
    pub seen: usize,
    pub backprop_time: Duration,
    pub backprop_flops: u64,
    /// `Σ |Δparam| / num_params`, summed over steps.
    pub update_sum: f64,
    pub steps: u64,
    /// Backward multiply-adds per layer, and what full back propagation
    /// through the same shapes would have cost.
    pub layer_flops: Vec<u64>,
    pub layer_full_flops: Vec<u64>,
}

impl EpochMeter {
    pub fn loss(&self) -> f64 {
        self.loss_sum / self.seen.max(1) as f64
    }

    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.seen.max(1) as f64
    }

    /// Backward cost of each layer relative to full back propagation.
    pub fn flop_ratios(&self) -> Vec<f64> {
        self.layer_flops
            .iter()
            .zip(&self.layer_full_flops)
            .map(|(&a, &b)| a as f64 / b.max(1) as f64)
            .collect()
    }

    /// Average absolute parameter change per update.
    pub fn mean_update(&self) -> f64 {
        self.update_sum / self.steps.max(1) as f64
    }
}

/// Forward, backward and one optimizer step on a batch of examples.
pub fn train_step<R: Rng + ?Sized>(
    model: &mut Mlp,
    adam: &mut Adam,
    data: &Dataset,
    idx: &[usize],
    frozen: Option<&FrozenUnits<'_>>,
    rng: &mut R,
    meter: &mut EpochMeter,
) -> Result<BatchGrads> {
    let (x, y) = data.gather(idx);
    let mut fwd = FlopCounter::new();
    let trace = model.forward_batch(&x, rng, frozen, &mut fwd)?;
    let mut flops = FlopCounter::new();
    let start = Instant::now();
    let grads = model.backward_batch(&trace, &y, &mut flops)?;
    meter.backprop_time += start.elapsed();
    meter.backprop_flops += flops.get();
    let nl = model.layers.len();
    meter.layer_flops.resize(nl, 0);
    meter.layer_full_flops.resize(nl, 0);
    for (l, (layer, step)) in model.layers.iter().zip(&grads.layers).enumerate() {
        let full = (idx.len() * layer.outputs() * layer.inputs()) as u64;
        meter.layer_flops[l] += step.flops;
        meter.layer_full_flops[l] += if l > 0 { 2 * full } else { full };
    }
    let moved = model.apply(&grads, adam)?;
    meter.update_sum += moved / model.num_params() as f64;
    meter.steps += 1;
    meter.loss_sum += grads.loss_sum;
    meter.correct += grads.correct;
    meter.seen += idx.len();
    Ok(grads)
}

/// One shuffled pass over `data`. `frozen` supplies pinned units per batch;
/// `after` sees every batch's gradients once the step has been applied.
#[allow(clippy::too_many_arguments)]
pub fn run_epoch<'m, R, F, A>(
    model: &mut Mlp,
    adam: &mut Adam,
    data: &Dataset,
    batch_size: usize,
    seed: u64,
    epoch: u64,
    rng: &mut R,
    mut frozen: F,
    mut after: A,
) -> Result<EpochMeter>
where
    R: Rng + ?Sized,
    F: FnMut(&[usize]) -> Option<FrozenUnits<'m>>,
    A: FnMut(&mut Mlp, &mut Adam, &BatchGrads, &[usize]) -> Result<()>,
{
    let mut meter = EpochMeter::default();
    let order = epoch_order(data.len(), seed, epoch);
    for idx in order.chunks(batch_size.max(1)) {
        let fz = frozen(idx);
        let grads = train_step(model, adam, data, idx, fz.as_ref(), rng, &mut meter)?;
        after(model, adam, &grads, idx)?;
    }
    Ok(meter)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
}

/// Mask-free, dropout-free evaluation.
pub fn evaluate(model: &Mlp, data: &Dataset) -> Result<Evaluation> {
    const CHUNK: usize = 1000;
    let mut correct = 0;
    let mut loss = 0.0;
    let all: Vec<usize> = (0..data.len()).collect();
    for chunk in all.chunks(CHUNK) {
        let (x, y) = data.gather(chunk);
        let logits = model.predict_batch(&x)?;
        for (b, &t) in y.iter().enumerate() {
            let row = logits.row(b);
            loss += softmax_cross_entropy(row, t)?.0;
            if argmax(row) == t {
                correct += 1;
            }
        }
    }
    let n = data.len().max(1) as f64;
    Ok(Evaluation {
        accuracy: correct as f64 / n,
        loss: loss / n,
    })
}
