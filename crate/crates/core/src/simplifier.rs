//! Counter-based neuron pruning with cycled training.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::layers::mlp::{FrozenUnits, MaskedUnit, Mlp};
use crate::layers::tagger::BiLstmTagger;
use crate::numerics::{FlopCounter, IndexSet, Matrix};
use crate::optimizer::Adam;
use crate::trainer::{run_epoch, EpochMeter};

/// How often each neuron was in the top-k since the last prune.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UpdateCounter {
    counts: Vec<u64>,
    examples_seen: u64,
}

impl UpdateCounter {
    pub fn new(len: usize) -> Self {
        UpdateCounter {
            counts: vec![0; len],
            examples_seen: 0,
        }
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn examples_seen(&self) -> u64 {
        self.examples_seen
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// One example's selection.
    pub fn record(&mut self, selected: &IndexSet) -> Result<()> {
        if selected.universe() != self.counts.len() {
            return Err(Error::IndexOutOfRange {
                op: "UpdateCounter::record",
                index: selected.universe(),
                universe: self.counts.len(),
            });
        }
        for &i in selected.indices() {
            self.counts[i] += 1;
        }
        self.examples_seen += 1;
        Ok(())
    }

    pub fn reset(&mut self, len: usize) {
        self.counts.clear();
        self.counts.resize(len, 0);
        self.examples_seen = 0;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruneConfig {
    /// Examples between prune events.
    pub prune_interval: usize,
    pub prune_rate: f64,
    pub min_keep: usize,
    pub cycle_epochs: usize,
    pub simplify_epochs: usize,
}

impl PruneConfig {
    pub fn threshold(&self) -> f64 {
        self.prune_interval as f64 * self.prune_rate
    }

    pub fn validate(&self) -> Result<()> {
        if self.prune_interval == 0 {
            return Err(Error::Config {
                field: "prune_interval",
                reason: "must be positive".into(),
            });
        }
        if !(self.prune_rate >= 0.0 && self.prune_rate < 1.0) {
            return Err(Error::Config {
                field: "prune_rate",
                reason: format!("{} is outside [0, 1)", self.prune_rate),
            });
        }
        if self.min_keep == 0 {
            return Err(Error::Config {
                field: "min_keep",
                reason: "must be at least 1".into(),
            });
        }
        if self.cycle_epochs == 0 || self.simplify_epochs == 0 || self.simplify_epochs > self.cycle_epochs {
            return Err(Error::Config {
                field: "simplify_epochs",
                reason: format!(
                    "need 1 <= simplify_epochs ({}) <= cycle_epochs ({})",
                    self.simplify_epochs, self.cycle_epochs
                ),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub layer: usize,
    pub removed: Vec<usize>,
    pub kept: Vec<usize>,
    pub size_before: usize,
    pub size_after: usize,
}

/// Neurons with `count >= theta` survive; if fewer than `min_keep` would,
/// the `min_keep` highest counts are kept instead (ties to the lower index).
pub fn keep_set(counts: &[u64], theta: f64, min_keep: usize) -> IndexSet {
    let n = counts.len();
    let kept: Vec<usize> = (0..n).filter(|&i| counts[i] as f64 >= theta).collect();
    if kept.len() >= min_keep.min(n) {
        return IndexSet::new(kept, n).expect("ascending");
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    order.truncate(min_keep.min(n));
    IndexSet::from_unsorted(order, n).expect("in range")
}

fn report(layer: usize, keep: &IndexSet) -> PruneReport {
    PruneReport {
        layer,
        removed: keep.complement().into_indices(),
        kept: keep.indices().to_vec(),
        size_before: keep.universe(),
        size_after: keep.len(),
    }
}

/// Removes the given neurons of hidden layer `layer`: its rows, the next
/// layer's columns, and the matching optimizer state.
pub fn remove_neurons(model: &mut Mlp, adam: &mut Adam, layer: usize, keep: &IndexSet) -> Result<()> {
    if layer >= model.num_hidden() {
        return Err(Error::Prune {
            layer,
            reason: "only hidden layers can be pruned".into(),
        });
    }
    if keep.is_empty() {
        return Err(Error::Prune {
            layer,
            reason: "would remove every neuron".into(),
        });
    }
    let l = &mut model.layers[layer];
    l.weight = l.weight.gather_rows(keep);
    l.bias = keep.indices().iter().map(|&i| l.bias[i]).collect();
    let next = &mut model.layers[layer + 1];
    next.weight = next.weight.gather_cols(keep);
    let ws = Mlp::weight_slot(layer);
    adam.prune_rows(ws, keep)?;
    adam.prune_rows(ws + 1, keep)?;
    adam.prune_cols(Mlp::weight_slot(layer + 1), keep)?;
    Ok(())
}

/// Prunes one hidden layer by its counter and resets the counter.
pub fn prune_layer(
    model: &mut Mlp,
    adam: &mut Adam,
    layer: usize,
    counter: &mut UpdateCounter,
    config: &PruneConfig,
) -> Result<PruneReport> {
    if layer >= model.num_hidden() {
        return Err(Error::Prune {
            layer,
            reason: "only hidden layers can be pruned".into(),
        });
    }
    if counter.len() != model.layers[layer].outputs() {
        return Err(Error::Prune {
            layer,
            reason: format!(
                "counter has {} entries for {} neurons",
                counter.len(),
                model.layers[layer].outputs()
            ),
        });
    }
    let keep = keep_set(counter.counts(), config.threshold(), config.min_keep);
    let rep = report(layer, &keep);
    if !rep.removed.is_empty() {
        let before = cfg!(debug_assertions).then(|| model.clone());
        remove_neurons(model, adam, layer, &keep)?;
        if let Some(before) = before {
            let mut rng = ChaCha8Rng::seed_from_u64(layer as u64);
            let x = Matrix::from_fn(4, model.input_size(), |_, _| rng.random_range(-1.0..1.0));
            let diff = zero_mask_gap(&before, model, layer, &rep.removed, &x)?;
            debug_assert!(diff < 1e-12, "pruned forward differs by {diff}");
        }
    }
    counter.reset(keep.len());
    Ok(rep)
}

/// Largest logit difference between `pruned` and `original` with the
/// removed neurons of `layer` forced to zero.
pub fn zero_mask_gap(
    original: &Mlp,
    pruned: &Mlp,
    layer: usize,
    removed: &[usize],
    x: &Matrix,
) -> Result<f64> {
    let units: Vec<MaskedUnit> = removed
        .iter()
        .map(|&i| MaskedUnit {
            index: i as u32,
            value: 0.0,
        })
        .collect();
    let batch = x.rows();
    let per_layer: Vec<Vec<&[MaskedUnit]>> = (0..original.num_hidden())
        .map(|l| {
            if l == layer {
                vec![&units[..]; batch]
            } else {
                vec![&[][..]; batch]
            }
        })
        .collect();
    let frozen = FrozenUnits {
        units: per_layer,
        zero: true,
    };
    let mut plain = original.clone();
    plain.dropout = 0.0;
    let trace = plain.forward_batch(x, &mut ChaCha8Rng::seed_from_u64(0), Some(&frozen), &mut FlopCounter::new())?;
    let got = pruned.predict_batch(x)?;
    Ok(trace
        .logits()
        .as_slice()
        .iter()
        .zip(got.as_slice())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

/// Joint pruning of one LSTM direction: a unit survives if any gate kept it
/// often enough (per-unit maximum over the gate counters).
pub fn prune_lstm_joint(
    model: &mut BiLstmTagger,
    adam: &mut Adam,
    dir: usize,
    counters: &mut [UpdateCounter],
    config: &PruneConfig,
) -> Result<PruneReport> {
    let h = model.cells.get(dir).map(|c| c.hidden()).ok_or(Error::Prune {
        layer: dir,
        reason: "no such direction".into(),
    })?;
    if counters.len() != 4 || counters.iter().any(|c| c.len() != h) {
        return Err(Error::Prune {
            layer: dir,
            reason: "need four gate counters matching the hidden size".into(),
        });
    }
    let merged: Vec<u64> = (0..h)
        .map(|i| counters.iter().map(|c| c.counts()[i]).max().unwrap_or(0))
        .collect();
    let keep = keep_set(&merged, config.threshold(), config.min_keep);
    if keep.len() < h {
        model.prune_hidden(dir, &keep, adam)?;
    }
    for c in counters.iter_mut() {
        c.reset(keep.len());
    }
    Ok(report(dir, &keep))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Simplify,
    Normal,
}

/// Stage of a 0-based epoch: the first `simplify_epochs` of every cycle simplify.
pub fn stage_of(epoch: usize, config: &PruneConfig) -> Stage {
    if epoch % config.cycle_epochs < config.simplify_epochs {
        Stage::Simplify
    } else {
        Stage::Normal
    }
}

/// Outcome of one prune event in an instrumented run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneEvent {
    pub epoch: usize,
    pub examples: u64,
    pub reports: Vec<PruneReport>,
    /// Largest zero-mask forward gap, when instrumented.
    pub max_gap: Option<f64>,
    pub counters_reset: bool,
    pub shapes_consistent: bool,
}

#[derive(Debug, Clone)]
pub struct CycleOptions {
    pub k: usize,
    pub prune: PruneConfig,
    pub batch_size: usize,
    pub seed: u64,
    /// Check every prune event against the zero-mask oracle on these inputs.
    pub probe: Option<Matrix>,
}

/// State of a cycled run carried across epochs.
#[derive(Debug, Clone)]
pub struct CycledTrainer {
    pub options: CycleOptions,
    pub counters: Vec<UpdateCounter>,
    pub events: Vec<PruneEvent>,
    stage: Option<Stage>,
}

impl CycledTrainer {
    pub fn new(model: &Mlp, options: CycleOptions) -> Result<Self> {
        options.prune.validate()?;
        if options.k == 0 {
            return Err(Error::Config {
                field: "k",
                reason: "must be at least 1".into(),
            });
        }
        Ok(CycledTrainer {
            counters: model.hidden_sizes().into_iter().map(UpdateCounter::new).collect(),
            options,
            events: Vec::new(),
            stage: None,
        })
    }

    /// Trains one epoch of the schedule. The optimizer is reset and the
    /// counters cleared whenever the stage changes.
    pub fn train_epoch<R: Rng + ?Sized>(
        &mut self,
        model: &mut Mlp,
        adam: &mut Adam,
        train: &Dataset,
        epoch: usize,
        rng: &mut R,
    ) -> Result<(Stage, EpochMeter)> {
        let stage = stage_of(epoch, &self.options.prune);
        if self.stage.is_some_and(|s| s != stage) {
            adam.reset();
            for (c, n) in self.counters.iter_mut().zip(model.hidden_sizes()) {
                c.reset(n);
            }
        }
        self.stage = Some(stage);
        match stage {
            Stage::Normal => {
                model.set_hidden_k(None);
                let meter = run_epoch(
                    model,
                    adam,
                    train,
                    self.options.batch_size,
                    self.options.seed,
                    epoch as u64,
                    rng,
                    |_| None,
                    |_, _, _, _| Ok(()),
                )?;
                Ok((stage, meter))
            }
            Stage::Simplify => {
                model.set_hidden_k(Some(self.options.k));
                let counters = &mut self.counters;
                let events = &mut self.events;
                let opts = &self.options;
                let meter = run_epoch(
                    model,
                    adam,
                    train,
                    opts.batch_size,
                    opts.seed,
                    epoch as u64,
                    rng,
                    |_| None,
                    |model, adam, grads, idx| {
                        for (l, c) in counters.iter_mut().enumerate() {
                            match &grads.layers[l].per_example {
                                Some(sets) => {
                                    for s in sets {
                                        c.record(s)?;
                                    }
                                }
                                None => {
                                    let all = IndexSet::full(c.len());
                                    for _ in idx {
                                        c.record(&all)?;
                                    }
                                }
                            }
                        }
                        if counters[0].examples_seen() >= opts.prune.prune_interval as u64 {
                            events.push(prune_all(model, adam, counters, opts, epoch)?);
                        }
                        Ok(())
                    },
                )?;
                Ok((stage, meter))
            }
        }
    }
}

fn prune_all(
    model: &mut Mlp,
    adam: &mut Adam,
    counters: &mut [UpdateCounter],
    opts: &CycleOptions,
    epoch: usize,
) -> Result<PruneEvent> {
    let examples = counters[0].examples_seen();
    let mut reports = Vec::with_capacity(counters.len());
    let mut max_gap = None;
    for (l, c) in counters.iter_mut().enumerate() {
        let before = opts.probe.as_ref().map(|_| model.clone());
        let rep = prune_layer(model, adam, l, c, &opts.prune)?;
        if let (Some(x), Some(before)) = (&opts.probe, before) {
            let gap = zero_mask_gap(&before, model, l, &rep.removed, x)?;
            max_gap = Some(max_gap.map_or(gap, |g: f64| g.max(gap)));
        }
        reports.push(rep);
    }
    let counters_reset = counters
        .iter()
        .zip(model.hidden_sizes())
        .all(|(c, n)| c.examples_seen() == 0 && c.len() == n && c.counts().iter().all(|&v| v == 0));
    let shapes_consistent = shapes_consistent(model, adam);
    Ok(PruneEvent {
        epoch,
        examples,
        reports,
        max_gap,
        counters_reset,
        shapes_consistent,
    })
}

/// Optimizer state mirrors the parameters and the layers chain.
pub fn shapes_consistent(model: &Mlp, adam: &Adam) -> bool {
    let chained = model
        .layers
        .windows(2)
        .all(|w| w[0].outputs() == w[1].inputs());
    let mirrored = model.param_shapes() == adam.slots().iter().map(|s| s.shape()).collect::<Vec<_>>();
    chained && mirrored
}

/// The tagger analogue of [`shapes_consistent`].
pub fn tagger_shapes_consistent(model: &BiLstmTagger, adam: &Adam) -> bool {
    let [hf, hb] = model.hidden_sizes();
    let cells_ok = model.cells.iter().all(|c| c.check().is_ok() && c.input() == model.embedding.cols());
    let mirrored = model.param_shapes() == adam.slots().iter().map(|s| s.shape()).collect::<Vec<_>>();
    cells_ok && mirrored && model.output.inputs() == hf + hb
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::activation::Activation;
    use crate::optimizer::AdamConfig;

    fn cfg(theta_rate: f64) -> PruneConfig {
        PruneConfig {
            prune_interval: 10,
            prune_rate: theta_rate,
            min_keep: 1,
            cycle_epochs: 10,
            simplify_epochs: 5,
        }
    }

    #[test]
    fn counter_records_and_bounds() {
        let mut c = UpdateCounter::new(4);
        let s = IndexSet::new(vec![0, 1], 4).unwrap();
        c.record(&s).unwrap();
        c.record(&s).unwrap();
        assert_eq!(c.counts(), &[2, 2, 0, 0]);
        assert!(c.record(&IndexSet::full(3)).is_err());
        // A shared set recorded for every example of a batch of 3.
        let mut u = UpdateCounter::new(4);
        let shared = IndexSet::new(vec![2], 4).unwrap();
        for _ in 0..3 {
            u.record(&shared).unwrap();
        }
        assert_eq!(u.counts()[2], 3);
        assert!(u.counts().iter().all(|&v| v <= u.examples_seen()));
    }

    #[test]
    fn keep_rule_examples() {
        assert_eq!(keep_set(&[10, 2, 7], 5.0, 1).indices(), &[0, 2]);
        assert_eq!(keep_set(&[10, 6, 7], 5.0, 1).indices(), &[0, 1, 2]);
        // Floor: nothing reaches θ, the best two survive.
        assert_eq!(keep_set(&[1, 3, 0, 3], 5.0, 2).indices(), &[1, 3]);
    }

    #[test]
    fn prune_removes_rows_and_next_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut m = Mlp::new(4, &[3, 5], 2, Activation::Relu, None, &mut rng).unwrap();
        let original = m.clone();
        let mut adam = m.new_optimizer(AdamConfig::default());
        let mut c = UpdateCounter::new(3);
        c.counts = vec![10, 2, 7];
        c.examples_seen = 10;
        let rep = prune_layer(&mut m, &mut adam, 0, &mut c, &cfg(0.5)).unwrap();
        assert_eq!(rep.kept, vec![0, 2]);
        assert_eq!(rep.removed, vec![1]);
        assert_eq!(m.layers[0].weight.row(1), original.layers[0].weight.row(2));
        assert_eq!(m.layers[1].weight.cols(), 2);
        assert_eq!(m.layers[1].weight.get(3, 1), original.layers[1].weight.get(3, 2));
        assert_eq!(c.counts(), &[0, 0]);
        assert_eq!(c.examples_seen(), 0);
        assert!(shapes_consistent(&m, &adam));
    }

    #[test]
    fn nothing_below_threshold_is_a_no_op() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut m = Mlp::new(4, &[3], 2, Activation::Relu, None, &mut rng).unwrap();
        let original = m.clone();
        let mut adam = m.new_optimizer(AdamConfig::default());
        let mut c = UpdateCounter::new(3);
        c.counts = vec![9, 9, 9];
        let rep = prune_layer(&mut m, &mut adam, 0, &mut c, &cfg(0.5)).unwrap();
        assert!(rep.removed.is_empty());
        assert_eq!(m, original);
    }

    #[test]
    fn output_layer_cannot_be_pruned() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut m = Mlp::new(4, &[3], 2, Activation::Relu, None, &mut rng).unwrap();
        let mut adam = m.new_optimizer(AdamConfig::default());
        let mut c = UpdateCounter::new(2);
        assert!(prune_layer(&mut m, &mut adam, 1, &mut c, &cfg(0.5)).is_err());
    }

    #[test]
    fn zero_mask_oracle_on_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut m = Mlp::new(6, &[8, 7], 3, Activation::Tanh, None, &mut rng).unwrap();
        let original = m.clone();
        let mut adam = m.new_optimizer(AdamConfig::default());
        let keep = IndexSet::new(vec![0, 2, 3, 6], 7).unwrap();
        remove_neurons(&mut m, &mut adam, 1, &keep).unwrap();
        let x = Matrix::from_fn(100, 6, |_, _| rng.random_range(-2.0..2.0));
        let gap = zero_mask_gap(&original, &m, 1, keep.complement().indices(), &x).unwrap();
        assert!(gap < 1e-12, "{gap}");
    }

    #[test]
    fn lstm_merge_uses_max() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut t = BiLstmTagger::init(5, 3, 2, 3, None, &mut rng);
        let mut adam = t.new_optimizer(AdamConfig::default());
        let mut counters: Vec<UpdateCounter> = (0..4).map(|_| UpdateCounter::new(2)).collect();
        // Unit 0: (i:9, f:1, o:1, c:1) survives; unit 1 is low in every gate.
        for (g, c) in counters.iter_mut().enumerate() {
            c.counts = vec![if g == 0 { 9 } else { 1 }, 1];
        }
        let rep = prune_lstm_joint(&mut t, &mut adam, 0, &mut counters, &cfg(0.5)).unwrap();
        assert_eq!(rep.kept, vec![0]);
        assert_eq!(t.hidden_sizes(), [1, 2]);
        assert!(counters.iter().all(|c| c.len() == 1));
    }

    #[test]
    fn schedule_alternates() {
        let c = cfg(0.1);
        let stages: Vec<Stage> = (0..20).map(|e| stage_of(e, &c)).collect();
        for (e, s) in stages.iter().enumerate() {
            let expected = if e % 10 < 5 { Stage::Simplify } else { Stage::Normal };
            assert_eq!(*s, expected);
        }
    }

    #[test]
    fn config_validation() {
        assert!(cfg(0.1).validate().is_ok());
        assert!(cfg(1.5).validate().is_err());
        let mut c = cfg(0.1);
        c.simplify_epochs = 11;
        assert!(c.validate().is_err());
    }
}
