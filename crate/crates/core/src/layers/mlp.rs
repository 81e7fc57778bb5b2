//! Multi-layer perceptron with a softmax output.
//!
//! Two entry points share the same arithmetic:
//! - [`Mlp::model_forward`] / [`Mlp::model_backward`] run one example through
//!   the per-unit operations in [`super::linear`];
//! - [`Mlp::forward_batch`] / [`Mlp::backward_batch`] are the training path,
//!   which accumulates mini-batch gradients row by row and never materialises
//!   gradient rows outside the selected sets.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::activation::Activation;
use super::linear::{
    linear_backward_full, linear_backward_meprop, linear_forward, ForwardCache, LayerGradients,
    LinearLayer,
};
use super::loss::{argmax, softmax_cross_entropy};
use crate::error::{Error, Result};
use crate::numerics::{axpy, dot, top_k_indices, top_k_into, FlopCounter, IndexSet, Matrix};
use crate::optimizer::{Adam, AdamConfig};

/// How meProp picks rows within a mini-batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Every example gets its own top-k set.
    #[default]
    PerExample,
    /// One set, from the batch-mean gradient magnitude, shared by the batch.
    Unified,
}

/// A hidden unit whose output is pinned for one example.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskedUnit {
    pub index: u32,
    pub value: f64,
}

/// Pinned units for one mini-batch: `units[hidden_layer][example]`.
pub struct FrozenUnits<'a> {
    pub units: Vec<Vec<&'a [MaskedUnit]>>,
    /// Pin to zero instead of the recorded value.
    pub zero: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<LinearLayer>,
    pub hidden_activation: Activation,
    pub dropout: f64,
    pub selection: Selection,
}

/// Per-example forward record: one cache per layer, the last holding logits.
#[derive(Debug, Clone)]
pub struct MlpTrace {
    pub caches: Vec<ForwardCache>,
}

impl MlpTrace {
    pub fn logits(&self) -> &[f64] {
        &self.caches.last().expect("non-empty model").z
    }
}

/// Mini-batch forward record. Row `b` of every matrix belongs to example `b`.
#[derive(Debug, Clone)]
pub struct BatchTrace {
    pub inputs: Vec<Matrix>,
    pub pre: Vec<Matrix>,
    pub post: Vec<Matrix>,
    dropout_scales: Vec<Option<Matrix>>,
    frozen: Vec<Option<Vec<bool>>>,
}

impl BatchTrace {
    pub fn logits(&self) -> &Matrix {
        self.post.last().expect("non-empty model")
    }

    pub fn batch_size(&self) -> usize {
        self.inputs[0].rows()
    }
}

/// Mean mini-batch gradient of one linear layer, restricted to `rows`.
#[derive(Debug, Clone)]
pub struct LayerStep {
    pub rows: IndexSet,
    pub dw: Matrix,
    pub db: Vec<f64>,
    /// Selected row set of each example, when the layer was sparsified.
    pub per_example: Option<Vec<IndexSet>>,
    /// Multiply-adds spent on this layer's backward pass.
    pub flops: u64,
}

#[derive(Debug, Clone)]
pub struct BatchGrads {
    pub layers: Vec<LayerStep>,
    pub loss_sum: f64,
    pub correct: usize,
    /// `dL/dz` of each hidden layer's output, per example (unscaled by batch size).
    pub hidden_output_grads: Vec<Matrix>,
}

impl Mlp {
    /// `inputs → hidden[0] → … → classes`; hidden layers get `meprop_k`,
    /// the output layer always back-propagates fully.
    pub fn new<R: Rng + ?Sized>(
        inputs: usize,
        hidden: &[usize],
        classes: usize,
        hidden_activation: Activation,
        meprop_k: Option<usize>,
        rng: &mut R,
    ) -> Result<Self> {
        if inputs == 0 || classes == 0 || hidden.contains(&0) {
            return Err(Error::invalid("layer sizes", "every layer needs at least one unit"));
        }
        if meprop_k == Some(0) {
            return Err(Error::invalid("meprop_k", "must be at least 1"));
        }
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut prev = inputs;
        for &h in hidden {
            layers.push(LinearLayer::init(prev, h, meprop_k, rng));
            prev = h;
        }
        layers.push(LinearLayer::init(prev, classes, None, rng));
        Ok(Mlp {
            layers,
            hidden_activation,
            dropout: 0.0,
            selection: Selection::PerExample,
        })
    }

    pub fn from_layers(layers: Vec<LinearLayer>, hidden_activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("layers", "model needs at least one layer"));
        }
        for (l, w) in layers.windows(2).enumerate() {
            if w[0].outputs() != w[1].inputs() {
                return Err(Error::DimensionMismatch {
                    op: "Mlp::from_layers",
                    left: w[0].weight.shape(),
                    right: w[1].weight.shape(),
                }
                .in_layer(l + 1));
            }
        }
        Ok(Mlp {
            layers,
            hidden_activation,
            dropout: 0.0,
            selection: Selection::PerExample,
        })
    }

    pub fn num_hidden(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.layers[..self.num_hidden()]
            .iter()
            .map(LinearLayer::outputs)
            .collect()
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn num_classes(&self) -> usize {
        self.layers.last().map_or(0, LinearLayer::outputs)
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.as_slice().len() + l.bias.len())
            .sum()
    }

    /// Sets the top-k budget of every hidden layer.
    pub fn set_hidden_k(&mut self, k: Option<usize>) {
        let hidden = self.num_hidden();
        for layer in &mut self.layers[..hidden] {
            layer.meprop_k = k;
        }
    }

    /// Optimizer slot of a layer's weight; its bias is the next slot.
    pub fn weight_slot(layer: usize) -> usize {
        2 * layer
    }

    pub fn param_shapes(&self) -> Vec<(usize, usize)> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.shape(), (l.outputs(), 1)])
            .collect()
    }

    pub fn new_optimizer(&self, config: AdamConfig) -> Adam {
        Adam::new(config, &self.param_shapes())
    }

    fn activation_of(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            Activation::Identity
        } else {
            self.hidden_activation
        }
    }

    /// Forward pass of one example through the per-unit operations.
    pub fn model_forward(&self, x: &[f64], flops: &mut FlopCounter) -> Result<MlpTrace> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut input: Vec<f64> = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let (y, mut cache) = linear_forward(layer, &input, flops).map_err(|e| e.in_layer(l))?;
            cache.z = self.activation_of(l).forward(&y);
            input = cache.z.to_vec();
            caches.push(cache);
        }
        Ok(MlpTrace { caches })
    }

    /// Back propagation of one example's loss, honouring each layer's `meprop_k`.
    pub fn model_backward(
        &self,
        trace: &MlpTrace,
        target: usize,
        flops: &mut FlopCounter,
    ) -> Result<(f64, Vec<LayerGradients>)> {
        let (loss, mut grad_z) = softmax_cross_entropy(trace.logits(), target)?;
        let mut out: Vec<Option<LayerGradients>> = vec![None; self.layers.len()];
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let cache = &trace.caches[l];
            let grad_y = self.activation_of(l).backward(&cache.y, &cache.z, &grad_z);
            let grads = match layer.meprop_k {
                Some(k) if k < layer.outputs() => {
                    linear_backward_meprop(layer, cache, &grad_y, k, flops)
                }
                _ => linear_backward_full(layer, cache, &grad_y, flops),
            }
            .map_err(|e| e.in_layer(l))?;
            grad_z = grads.dx.clone();
            out[l] = Some(grads);
        }
        Ok((loss, out.into_iter().map(Option::unwrap).collect()))
    }

    /// Class scores for a batch, evaluation mode (no dropout, no masks).
    pub fn predict_batch(&self, x: &Matrix) -> Result<Matrix> {
        let mut input = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut y = affine_batch(layer, &input).map_err(|e| e.in_layer(l))?;
            let act = self.activation_of(l);
            if act != Activation::Identity {
                for v in y.as_mut_slice() {
                    *v = act.apply(*v);
                }
            }
            input = y;
        }
        Ok(input)
    }

    /// Hidden-layer outputs for a batch, evaluation mode.
    pub fn hidden_outputs(&self, x: &Matrix) -> Result<Vec<Matrix>> {
        let mut out = Vec::with_capacity(self.num_hidden());
        let mut input = x.clone();
        for l in 0..self.num_hidden() {
            let mut y = affine_batch(&self.layers[l], &input).map_err(|e| e.in_layer(l))?;
            for v in y.as_mut_slice() {
                *v = self.hidden_activation.apply(*v);
            }
            out.push(y.clone());
            input = y;
        }
        Ok(out)
    }

    /// Training-mode forward pass over a batch.
    pub fn forward_batch<R: Rng + ?Sized>(
        &self,
        x: &Matrix,
        rng: &mut R,
        frozen: Option<&FrozenUnits<'_>>,
        flops: &mut FlopCounter,
    ) -> Result<BatchTrace> {
        let batch = x.rows();
        let nl = self.layers.len();
        let mut trace = BatchTrace {
            inputs: Vec::with_capacity(nl),
            pre: Vec::with_capacity(nl),
            post: Vec::with_capacity(nl),
            dropout_scales: Vec::with_capacity(nl),
            frozen: Vec::with_capacity(nl),
        };
        let mut input = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let y = affine_batch(layer, &input).map_err(|e| e.in_layer(l))?;
            flops.add((batch * layer.outputs() * layer.inputs()) as u64);
            let act = self.activation_of(l);
            let mut z = y.clone();
            if act != Activation::Identity {
                for v in z.as_mut_slice() {
                    *v = act.apply(*v);
                }
            }
            let hidden = l + 1 < nl;
            let mut frozen_flags = None;
            if let (true, Some(fz)) = (hidden, frozen) {
                let per_example = fz.units.get(l).ok_or_else(|| {
                    Error::invalid("frozen", "missing entry for hidden layer").in_layer(l)
                })?;
                if per_example.len() != batch {
                    return Err(Error::DimensionMismatch {
                        op: "frozen units",
                        left: (batch, 0),
                        right: (per_example.len(), 0),
                    }
                    .in_layer(l));
                }
                let n = layer.outputs();
                let mut flags = vec![false; batch * n];
                for (b, units) in per_example.iter().enumerate() {
                    let row = z.row_mut(b);
                    for u in units.iter() {
                        let i = u.index as usize;
                        if i >= n {
                            return Err(Error::IndexOutOfRange {
                                op: "frozen units",
                                index: i,
                                universe: n,
                            }
                            .in_layer(l));
                        }
                        row[i] = if fz.zero { 0.0 } else { u.value };
                        flags[b * n + i] = true;
                    }
                }
                frozen_flags = Some(flags);
            }
            let mut scales = None;
            if hidden && self.dropout > 0.0 {
                let keep = 1.0 / (1.0 - self.dropout);
                let mut s = Matrix::zeros(batch, layer.outputs());
                for sv in s.as_mut_slice() {
                    *sv = if rng.random::<f64>() < self.dropout { 0.0 } else { keep };
                }
                for (zv, sv) in z.as_mut_slice().iter_mut().zip(s.as_slice()) {
                    *zv *= sv;
                }
                scales = Some(s);
            }
            trace.inputs.push(input);
            trace.pre.push(y);
            trace.dropout_scales.push(scales);
            trace.frozen.push(frozen_flags);
            input = z.clone();
            trace.post.push(z);
        }
        Ok(trace)
    }

    /// Back propagation of the mean softmax cross-entropy over the batch.
    pub fn backward_batch(
        &self,
        trace: &BatchTrace,
        targets: &[usize],
        flops: &mut FlopCounter,
    ) -> Result<BatchGrads> {
        let batch = trace.batch_size();
        if targets.len() != batch {
            return Err(Error::DimensionMismatch {
                op: "backward_batch",
                left: (batch, 0),
                right: (targets.len(), 0),
            });
        }
        let nl = self.layers.len();
        let logits = trace.logits();
        let mut grad = Matrix::zeros(batch, self.num_classes());
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for (b, &t) in targets.iter().enumerate() {
            let (loss, g) = softmax_cross_entropy(logits.row(b), t)?;
            loss_sum += loss;
            if argmax(logits.row(b)) == t {
                correct += 1;
            }
            grad.row_mut(b).copy_from_slice(&g);
        }

        let inv_batch = 1.0 / batch as f64;
        let mut steps: Vec<Option<LayerStep>> = vec![None; nl];
        let mut hidden_output_grads = vec![Matrix::zeros(0, 0); nl - 1];
        let mut scratch = Vec::new();
        let mut picked = Vec::new();

        for l in (0..nl).rev() {
            let layer = &self.layers[l];
            let n = layer.outputs();
            let m = layer.inputs();
            let x = &trace.inputs[l];
            let frozen = trace.frozen[l].as_deref();
            let need_dx = l > 0;

            let sparse_k = match layer.meprop_k {
                Some(k) if k < n => Some(k),
                _ => None,
            };
            let per_example: Option<Vec<IndexSet>> = match (sparse_k, frozen) {
                (None, None) => None,
                (Some(k), _) if self.selection == Selection::Unified => {
                    let shared = unified_topk_select(&grad, k)?;
                    Some(
                        (0..batch)
                            .map(|b| active_subset(shared.indices(), frozen, b, n))
                            .collect(),
                    )
                }
                (Some(k), _) => Some(
                    (0..batch)
                        .map(|b| {
                            top_k_into(grad.row(b), k, &mut scratch, &mut picked);
                            active_subset(&picked, frozen, b, n)
                        })
                        .collect(),
                ),
                (None, Some(_)) => {
                    let all: Vec<usize> = (0..n).collect();
                    Some(
                        (0..batch)
                            .map(|b| active_subset(&all, frozen, b, n))
                            .collect(),
                    )
                }
            };

            let mut dx = if need_dx {
                Matrix::zeros(batch, m)
            } else {
                Matrix::zeros(0, 0)
            };

            let step = match per_example {
                None => {
                    let mut dw = Matrix::zeros(n, m);
                    let mut db = vec![0.0; n];
                    for i in 0..n {
                        let w_row = layer.weight.row(i);
                        let dw_row = dw.row_mut(i);
                        for b in 0..batch {
                            let g = grad.get(b, i);
                            if g == 0.0 {
                                continue;
                            }
                            axpy(g, x.row(b), dw_row);
                            db[i] += g;
                            if need_dx {
                                axpy(g, w_row, dx.row_mut(b));
                            }
                        }
                    }
                    let work = (batch * n * m) as u64;
                    let work = if need_dx { 2 * work } else { work };
                    flops.add(work);
                    scale(dw.as_mut_slice(), inv_batch);
                    scale(&mut db, inv_batch);
                    LayerStep {
                        rows: IndexSet::full(n),
                        dw,
                        db,
                        per_example: None,
                        flops: work,
                    }
                }
                Some(sets) => {
                    // Which examples touch each row, ascending.
                    let mut users: Vec<Vec<usize>> = vec![Vec::new(); n];
                    let mut selected_total = 0usize;
                    for (b, s) in sets.iter().enumerate() {
                        selected_total += s.len();
                        for &i in s.indices() {
                            users[i].push(b);
                        }
                    }
                    let rows: Vec<usize> = (0..n).filter(|&i| !users[i].is_empty()).collect();
                    let mut dw = Matrix::zeros(rows.len(), m);
                    let mut db = vec![0.0; rows.len()];
                    for (pos, &i) in rows.iter().enumerate() {
                        let w_row = layer.weight.row(i);
                        let dw_row = dw.row_mut(pos);
                        for &b in &users[i] {
                            let g = grad.get(b, i);
                            if g == 0.0 {
                                continue;
                            }
                            axpy(g, x.row(b), dw_row);
                            db[pos] += g;
                            if need_dx {
                                axpy(g, w_row, dx.row_mut(b));
                            }
                        }
                    }
                    let work = (selected_total * m) as u64;
                    let work = if need_dx { 2 * work } else { work };
                    flops.add(work);
                    scale(dw.as_mut_slice(), inv_batch);
                    scale(&mut db, inv_batch);
                    LayerStep {
                        rows: IndexSet::new(rows, n)?,
                        dw,
                        db,
                        per_example: Some(sets),
                        flops: work,
                    }
                }
            };
            steps[l] = Some(step);

            if need_dx {
                let below = l - 1;
                hidden_output_grads[below] = dx.clone();
                let act = self.hidden_activation;
                let pre = &trace.pre[below];
                let post = &trace.post[below];
                let scales = trace.dropout_scales[below].as_ref();
                let frozen_below = trace.frozen[below].as_deref();
                let nb = pre.cols();
                for b in 0..batch {
                    let row = dx.row_mut(b);
                    for i in 0..nb {
                        let mut g = row[i];
                        // `post` holds the dropout-scaled output, so recompute z when scaled.
                        let z = match scales {
                            Some(s) => {
                                g *= s.get(b, i);
                                act.apply(pre.get(b, i))
                            }
                            None => post.get(b, i),
                        };
                        g *= act.derivative(pre.get(b, i), z);
                        if frozen_below.is_some_and(|f| f[b * nb + i]) {
                            g = 0.0;
                        }
                        row[i] = g;
                    }
                }
                grad = dx;
            }
        }

        Ok(BatchGrads {
            layers: steps.into_iter().map(Option::unwrap).collect(),
            loss_sum,
            correct,
            hidden_output_grads,
        })
    }

    /// Applies one optimizer step; dense layers get a dense step, sparse
    /// ones a lazy row step. Returns `Σ |Δparam|`.
    pub fn apply(&mut self, grads: &BatchGrads, adam: &mut Adam) -> Result<f64> {
        let mut moved = 0.0;
        for (l, (layer, step)) in self.layers.iter_mut().zip(&grads.layers).enumerate() {
            let (n, m) = layer.weight.shape();
            let ws = Mlp::weight_slot(l);
            if step.rows.is_full() {
                moved += adam
                    .step_dense_slice(ws, layer.weight.as_mut_slice(), n, m, step.dw.as_slice())
                    .map_err(|e| e.in_layer(l))?;
                moved += adam
                    .step_dense_slice(ws + 1, &mut layer.bias, n, 1, &step.db)
                    .map_err(|e| e.in_layer(l))?;
            } else {
                moved += adam
                    .step_rows(ws, layer.weight.as_mut_slice(), n, m, &step.rows, step.dw.as_slice())
                    .map_err(|e| e.in_layer(l))?;
                moved += adam
                    .step_rows(ws + 1, &mut layer.bias, n, 1, &step.rows, &step.db)
                    .map_err(|e| e.in_layer(l))?;
            }
        }
        Ok(moved)
    }
}

/// Top-k of the per-neuron mean `|g|` over a batch (one example per row).
pub fn unified_topk_select(grads: &Matrix, k: usize) -> Result<IndexSet> {
    if grads.rows() == 0 {
        return Err(Error::invalid("grads", "empty batch"));
    }
    let mut mean = vec![0.0; grads.cols()];
    for b in 0..grads.rows() {
        for (acc, g) in mean.iter_mut().zip(grads.row(b)) {
            *acc += g.abs();
        }
    }
    let inv = 1.0 / grads.rows() as f64;
    for v in &mut mean {
        *v *= inv;
    }
    top_k_indices(&mean, k)
}

fn scale(v: &mut [f64], s: f64) {
    for x in v {
        *x *= s;
    }
}

fn active_subset(picked: &[usize], frozen: Option<&[bool]>, b: usize, n: usize) -> IndexSet {
    let indices = match frozen {
        Some(f) => picked.iter().copied().filter(|&i| !f[b * n + i]).collect(),
        None => picked.to_vec(),
    };
    IndexSet::new(indices, n).expect("selection is sorted and in range")
}

/// `X Wᵀ + b` for a batch `X` (one example per row).
pub fn affine_batch(layer: &LinearLayer, x: &Matrix) -> Result<Matrix> {
    if x.cols() != layer.inputs() {
        return Err(Error::DimensionMismatch {
            op: "affine_batch",
            left: layer.weight.shape(),
            right: x.shape(),
        });
    }
    let batch = x.rows();
    let n = layer.outputs();
    let mut y = Matrix::zeros(batch, n);
    for i in 0..n {
        let w = layer.weight.row(i);
        let bias = layer.bias[i];
        for b in 0..batch {
            y.set(b, i, dot(w, x.row(b)) + bias);
        }
    }
    Ok(y)
}
